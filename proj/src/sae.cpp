#include "trajlens/sae.hpp"
#include "trajlens/hashing.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace trajlens {

static_assert(std::endian::native == std::endian::little, "raw f32 files are little-endian");

using nlohmann::json;
using nlohmann::ordered_json;

SaeWeights SaeWeights::zeros(std::size_t d_model, std::size_t n_features) {
  SaeWeights w;
  w.d_model = d_model;
  w.n_features = n_features;
  w.w_enc.assign(d_model * n_features, 0.0f);
  w.b_enc.assign(n_features, 0.0f);
  w.theta.assign(n_features, 0.0f);
  return w;
}

void SaeWeights::validate() const {
  if (w_enc.size() != d_model * n_features || b_enc.size() != n_features || theta.size() != n_features)
    throw ShapeError("SAE weights: inconsistent dimensions");
  auto finite = [](const std::vector<float>& v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
  };
  if (!finite(w_enc) || !finite(b_enc) || !finite(theta)) throw InvalidArgument("SAE weights: non-finite entry");
  if (std::any_of(theta.begin(), theta.end(), [](float t) { return t < 0.0f; }))
    throw InvalidArgument("SAE weights: negative threshold");
}

namespace {

std::vector<float> read_f32(const fs::path& p, std::size_t expected) {
  std::string raw = read_file(p);
  if (raw.size() != expected * sizeof(float))
    throw ShapeError(p.string() + ": expected " + std::to_string(expected) + " f32 values, file has " +
                     std::to_string(raw.size()) + " bytes");
  std::vector<float> v(expected);
  std::memcpy(v.data(), raw.data(), raw.size());
  return v;
}

void write_f32(const fs::path& p, const std::vector<float>& v) {
  write_file(p, std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float)));
}

}  // namespace

SaeWeights load_sae_weights(const fs::path& path) {
  fs::path manifest = fs::is_directory(path) ? path / "weights.json" : path;
  fs::path dir = manifest.parent_path();
  json j;
  try {
    j = json::parse(read_file(manifest));
  } catch (const json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  SaeWeights w;
  try {
    w.d_model = j.at("d_model").get<std::size_t>();
    w.n_features = j.at("n_features").get<std::size_t>();
    if (j.value("dtype", "f32") != "f32") throw ParseError("unsupported dtype " + j.value("dtype", ""));
    const auto& files = j.at("files");
    w.w_enc = read_f32(dir / files.at("W_enc").get<std::string>(), w.d_model * w.n_features);
    w.b_enc = read_f32(dir / files.at("b_enc").get<std::string>(), w.n_features);
    if (files.contains("theta"))
      w.theta = read_f32(dir / files.at("theta").get<std::string>(), w.n_features);
    else
      w.theta.assign(w.n_features, 0.0f);
  } catch (const json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  w.validate();
  return w;
}

void save_sae_weights(const SaeWeights& weights, const fs::path& dir) {
  weights.validate();
  fs::create_directories(dir);
  ordered_json j;
  j["d_model"] = weights.d_model;
  j["n_features"] = weights.n_features;
  j["dtype"] = "f32";
  j["files"] = {{"W_enc", "W_enc.f32"}, {"b_enc", "b_enc.f32"}, {"theta", "theta.f32"}};
  write_file(dir / "weights.json", j.dump(2) + "\n");
  write_f32(dir / "W_enc.f32", weights.w_enc);
  write_f32(dir / "b_enc.f32", weights.b_enc);
  write_f32(dir / "theta.f32", weights.theta);
}

SparseVector encode_token(const SaeWeights& weights, std::span<const float> x) {
  if (x.size() != weights.d_model)
    throw ShapeError("encode_token: input has " + std::to_string(x.size()) + " values, d_model is " +
                     std::to_string(weights.d_model));
  SparseVector out;
  for (std::size_t f = 0; f < weights.n_features; ++f) {
    const float* row = weights.w_enc.data() + f * weights.d_model;
    double acc = weights.b_enc[f];
    for (std::size_t i = 0; i < weights.d_model; ++i) acc += static_cast<double>(row[i]) * x[i];
    const float pre = static_cast<float>(acc);
    if (pre > 0.0f && pre > weights.theta[f]) out.push_back({static_cast<std::uint32_t>(f), pre});
  }
  return out;
}

SparseVector topk_retain(SparseVector v, std::size_t k) {
  if (k < 1) throw InvalidArgument("topk_retain: k must be >= 1");
  auto before = [](const SparseEntry& a, const SparseEntry& b) {
    if (a.value != b.value) return a.value > b.value;
    return a.feature_id < b.feature_id;
  };
  if (v.size() > k) {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), before);
    v.resize(k);
  }
  std::sort(v.begin(), v.end(), before);
  return v;
}

std::size_t TrajectoryActivations::find(std::uint32_t pos) const {
  auto it = std::lower_bound(positions.begin(), positions.end(), pos);
  if (it == positions.end() || *it != pos) return npos;
  return static_cast<std::size_t>(it - positions.begin());
}

// ---- activation dump ----

namespace {

std::string dump_file_name(const TrajectoryKey& key) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx.act", static_cast<unsigned long long>(key.hash()));
  return buf;
}

}  // namespace

ActivationDumpWriter::ActivationDumpWriter(fs::path dir, std::size_t d_model)
    : dir_(std::move(dir)), d_model_(d_model) {
  fs::create_directories(dir_);
}

void ActivationDumpWriter::write(const TrajectoryKey& key, const TrajectoryActivations& acts) {
  if (acts.d_model != d_model_) throw ShapeError("activation dump: d_model mismatch");
  if (acts.rows.size() != acts.positions.size() * d_model_) throw ShapeError("activation dump: row count mismatch");
  const std::string id = key.to_string();
  const std::string file = dump_file_name(key);
  ordered_json header;
  header["trajectory"] = id;
  header["d_model"] = d_model_;
  header["positions"] = acts.positions.size();
  std::string out = header.dump() + "\n";
  out.reserve(out.size() + acts.positions.size() * (4 + 4 * d_model_));
  for (std::size_t i = 0; i < acts.positions.size(); ++i) {
    const std::uint32_t pos = acts.positions[i];
    out.append(reinterpret_cast<const char*>(&pos), 4);
    out.append(reinterpret_cast<const char*>(acts.rows.data() + i * d_model_), 4 * d_model_);
  }
  write_file(dir_ / file, out);
  entries_.push_back({id, {file, acts.positions.size()}});
}

void ActivationDumpWriter::finish() {
  if (finished_) return;
  finished_ = true;
  auto sorted = entries_;
  std::sort(sorted.begin(), sorted.end());
  ordered_json j;
  j["format"] = "trajlens-activations-1";
  j["d_model"] = d_model_;
  ordered_json list = ordered_json::array();
  for (const auto& [id, fp] : sorted) list.push_back({{"trajectory", id}, {"file", fp.first}, {"positions", fp.second}});
  j["trajectories"] = std::move(list);
  write_file(dir_ / "activations.json", j.dump(2) + "\n");
}

ActivationDumpWriter::~ActivationDumpWriter() {
  try {
    finish();
  } catch (...) {
  }
}

ActivationDump::ActivationDump(fs::path dir) : dir_(std::move(dir)) {
  json j;
  try {
    j = json::parse(read_file(dir_ / "activations.json"));
    d_model_ = j.at("d_model").get<std::size_t>();
    for (const auto& e : j.at("trajectories"))
      files_.emplace(e.at("trajectory").get<std::string>(), e.at("file").get<std::string>());
  } catch (const json::exception& e) {
    throw ParseError((dir_ / "activations.json").string() + ": " + e.what());
  }
}

bool ActivationDump::contains(const TrajectoryKey& key) const { return files_.count(key.to_string()) > 0; }

TrajectoryActivations ActivationDump::read(const TrajectoryKey& key) const {
  const std::string id = key.to_string();
  auto it = files_.find(id);
  if (it == files_.end()) throw MissingActivationError("no activations for trajectory " + id);
  const fs::path p = dir_ / it->second;
  std::string raw = read_file(p);
  auto nl = raw.find('\n');
  if (nl == std::string::npos) throw ParseError(p.string() + ": missing header line");
  json header;
  try {
    header = json::parse(raw.substr(0, nl));
  } catch (const json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
  TrajectoryActivations acts;
  acts.d_model = header.at("d_model").get<std::size_t>();
  const std::size_t n = header.at("positions").get<std::size_t>();
  if (acts.d_model != d_model_) throw ShapeError(p.string() + ": d_model mismatch");
  const std::size_t rec = 4 + 4 * acts.d_model;
  if (raw.size() - nl - 1 != n * rec) throw ShapeError(p.string() + ": truncated records");
  acts.positions.resize(n);
  acts.rows.resize(n * acts.d_model);
  const char* cur = raw.data() + nl + 1;
  for (std::size_t i = 0; i < n; ++i, cur += rec) {
    std::memcpy(&acts.positions[i], cur, 4);
    std::memcpy(acts.rows.data() + i * acts.d_model, cur + 4, 4 * acts.d_model);
    if (i > 0 && acts.positions[i] <= acts.positions[i - 1])
      throw ParseError(p.string() + ": positions not increasing");
  }
  return acts;
}

TrajectoryActivations ActivationDump::fetch(const Trajectory& trajectory, const TokenizedTrajectory&) const {
  return read(trajectory.key);
}

std::vector<std::string> ActivationDump::trajectory_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, f] : files_) out.push_back(id);
  return out;
}

void ActivationDump::copy_to(const fs::path& out_dir) const {
  ActivationDumpWriter w(out_dir, d_model_);
  for (const auto& [id, file] : files_) {
    TrajectoryKey key;
    int b = 0, g = 0, t = 0, consumed = 0;
    if (std::sscanf(id.c_str(), "batch%d_group%d_trajectory%d_%n", &b, &g, &t, &consumed) != 3)
      throw ParseError("unrecognized trajectory id " + id);
    key.batch = b;
    key.group = g;
    key.traj = t;
    key.run_id = id.substr(static_cast<std::size_t>(consumed));
    w.write(key, read(key));
  }
  w.finish();
}

// ---- HTTP extractor ----

HttpActivationSource::HttpActivationSource(ExtractorEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_.d_model == 0) throw InvalidArgument("extractor endpoint needs d_model");
}

TrajectoryActivations HttpActivationSource::fetch(const Trajectory& trajectory,
                                                  const TokenizedTrajectory& tokens) const {
  const std::size_t total = tokens.size();
  auto spans = chunk_bounds(total, endpoint_.window, endpoint_.stride);
  auto owners = window_owners(spans, total);
  TrajectoryActivations acts;
  acts.d_model = endpoint_.d_model;
  acts.positions.resize(total);
  acts.rows.assign(total * acts.d_model, 0.0f);
  for (std::size_t i = 0; i < total; ++i) acts.positions[i] = static_cast<std::uint32_t>(i);

  httplib::Client client(endpoint_.base_url);
  client.set_read_timeout(300, 0);
  httplib::Headers headers;
  if (!endpoint_.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint_.api_key);

  for (std::size_t w = 0; w < spans.size(); ++w) {
    json body;
    body["token_ids"] = std::vector<TokenId>(tokens.ids.begin() + static_cast<std::ptrdiff_t>(spans[w].start),
                                             tokens.ids.begin() + static_cast<std::ptrdiff_t>(spans[w].end));
    const std::string payload = body.dump();
    std::string last_error;
    json reply;
    bool ok = false;
    int backoff = endpoint_.backoff_ms;
    for (int attempt = 0; attempt < endpoint_.max_attempts && !ok; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
        backoff *= 2;
      }
      auto res = client.Post(endpoint_.path, headers, payload, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status / 100 != 2) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      try {
        reply = json::parse(res->body);
        ok = true;
      } catch (const json::exception& e) {
        last_error = e.what();
      }
    }
    if (!ok)
      throw ExtractionError("extractor failed for " + trajectory.key.to_string() + " window " +
                            std::to_string(spans[w].start) + ": " + last_error);
    const auto& rows = reply.at("activations");
    const std::size_t len = spans[w].end - spans[w].start;
    if (!rows.is_array() || rows.size() != len)
      throw ExtractionError("extractor returned " + std::to_string(rows.size()) + " rows for a window of " +
                            std::to_string(len));
    for (std::size_t r = 0; r < len; ++r) {
      const std::size_t pos = spans[w].start + r;
      if (owners[pos] != w) continue;
      const auto& row = rows[r];
      if (row.size() != acts.d_model) throw ShapeError("extractor row has wrong width");
      for (std::size_t c = 0; c < acts.d_model; ++c) acts.rows[pos * acts.d_model + c] = row[c].get<float>();
    }
  }
  return acts;
}

}  // namespace trajlens
