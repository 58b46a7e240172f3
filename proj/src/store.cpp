#include "trajlens/store.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <json.hpp>
#include <omp.h>

namespace trajlens {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr char kMagic[8] = {'T', 'L', 'S', 'T', 'O', 'R', 'E', '1'};

std::string shard_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard_%03zu.bin", i);
  return buf;
}

ordered_json trajectory_json(const StoredTrajectory& t) {
  ordered_json j;
  j["trajectory"] = t.key.to_string();
  j["run_id"] = t.key.run_id;
  j["batch"] = t.key.batch;
  j["group"] = t.key.group;
  j["traj"] = t.key.traj;
  j["hash"] = t.hash;
  j["reward"] = t.reward;
  j["total_tokens"] = t.total_tokens;
  j["masked_tokens"] = t.masked_tokens;
  j["records"] = t.records;
  j["records_unmasked"] = t.records_unmasked;
  return j;
}

StoredTrajectory trajectory_from(const json& j) {
  StoredTrajectory t;
  t.key.run_id = j.at("run_id").get<std::string>();
  t.key.batch = j.at("batch").get<std::int64_t>();
  t.key.group = j.at("group").get<std::int64_t>();
  t.key.traj = j.at("traj").get<std::int64_t>();
  t.hash = j.at("hash").get<std::uint64_t>();
  t.reward = j.at("reward").get<double>();
  t.total_tokens = j.at("total_tokens").get<std::uint64_t>();
  t.masked_tokens = j.at("masked_tokens").get<std::uint64_t>();
  t.records = j.at("records").get<std::uint64_t>();
  t.records_unmasked = j.at("records_unmasked").get<std::uint64_t>();
  return t;
}

}  // namespace

std::uint64_t StoreMeta::total_records() const {
  std::uint64_t n = 0;
  for (const auto& t : trajectories) n += t.records;
  return n;
}

std::uint64_t StoreMeta::total_records_unmasked() const {
  std::uint64_t n = 0;
  for (const auto& t : trajectories) n += t.records_unmasked;
  return n;
}

struct StoreWriter::Shard {
  std::ofstream out;
  std::uint64_t records = 0;
  std::uint64_t trajectories = 0;
};

StoreWriter::StoreWriter(fs::path dir, StoreMeta meta_template) : dir_(std::move(dir)), meta_(std::move(meta_template)) {
  if (meta_.n_shards == 0) throw InvalidArgument("store needs at least one shard");
  meta_.trajectories.clear();
  fs::create_directories(dir_);
  for (std::size_t i = 0; i < meta_.n_shards; ++i) {
    auto s = std::make_unique<Shard>();
    s->out.open(dir_ / shard_name(i), std::ios::binary | std::ios::trunc);
    if (!s->out) throw IoError("cannot create shard " + (dir_ / shard_name(i)).string());
    shards_.push_back(std::move(s));
  }
}

StoreWriter::~StoreWriter() {
  if (!sealed_) {
    try {
      seal();
    } catch (...) {
    }
  }
}

void StoreWriter::append(const StoredTrajectory& trajectory, std::span<const StoreRecord> records) {
  if (sealed_) throw Error("store already sealed");
  auto& shard = *shards_[trajectory.hash % meta_.n_shards];
  for (const auto& r : records) {
    if (r.trajectory_hash != trajectory.hash) throw InvalidArgument("record belongs to another trajectory");
    if (r.feature_id >= meta_.n_features && meta_.n_features != 0)
      throw InvalidArgument("feature id out of range");
    if (!(r.value > 0.0f)) throw InvalidArgument("store records must be strictly positive");
  }
  shard.out.write(reinterpret_cast<const char*>(records.data()),
                  static_cast<std::streamsize>(records.size() * sizeof(StoreRecord)));
  shard.records += records.size();
  shard.trajectories += 1;
  StoredTrajectory info = trajectory;
  info.records = records.size();
  meta_.trajectories.push_back(info);
}

void StoreWriter::seal() {
  if (sealed_) return;
  sealed_ = true;
  for (std::size_t i = 0; i < shards_.size(); ++i) {
    auto& s = *shards_[i];
    ordered_json footer;
    footer["shard"] = i;
    footer["records"] = s.records;
    footer["trajectories"] = s.trajectories;
    footer["record_bytes"] = sizeof(StoreRecord);
    const std::string text = footer.dump();
    const std::uint64_t len = text.size();
    s.out.write(text.data(), static_cast<std::streamsize>(text.size()));
    s.out.write(reinterpret_cast<const char*>(&len), sizeof len);
    s.out.write(kMagic, sizeof kMagic);
    s.out.close();
    if (!s.out) throw IoError("failed to seal shard " + std::to_string(i));
  }
  ordered_json j;
  j["format"] = "trajlens-store-1";
  j["n_shards"] = meta_.n_shards;
  j["n_features"] = meta_.n_features;
  j["k"] = meta_.k;
  j["window"] = meta_.window;
  j["stride"] = meta_.stride;
  j["total_records"] = meta_.total_records();
  j["total_records_unmasked"] = meta_.total_records_unmasked();
  ordered_json list = ordered_json::array();
  for (const auto& t : meta_.trajectories) list.push_back(trajectory_json(t));
  j["trajectories"] = std::move(list);
  write_file(dir_ / "store.json", j.dump(1) + "\n");
}

SparseStore SparseStore::open(const fs::path& dir) {
  SparseStore s;
  s.dir_ = dir;
  json j;
  try {
    j = json::parse(read_file(dir / "store.json"));
    s.meta_.n_shards = j.at("n_shards").get<std::size_t>();
    s.meta_.n_features = j.at("n_features").get<std::size_t>();
    s.meta_.k = j.at("k").get<std::size_t>();
    s.meta_.window = j.at("window").get<std::size_t>();
    s.meta_.stride = j.at("stride").get<std::size_t>();
    for (const auto& t : j.at("trajectories")) s.meta_.trajectories.push_back(trajectory_from(t));
  } catch (const json::exception& e) {
    throw ParseError((dir / "store.json").string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < s.meta_.trajectories.size(); ++i)
    if (!s.hash_to_index_.emplace(s.meta_.trajectories[i].hash, i).second)
      throw DuplicateKeyError("store has two trajectories with hash " +
                              std::to_string(s.meta_.trajectories[i].hash));
  return s;
}

std::vector<StoreRecord> SparseStore::read_shard(std::size_t shard) const {
  const fs::path p = dir_ / shard_name(shard);
  std::string raw = read_file(p);
  if (raw.size() < 16 || std::memcmp(raw.data() + raw.size() - 8, kMagic, 8) != 0)
    throw ParseError(p.string() + ": not a sealed shard");
  std::uint64_t len = 0;
  std::memcpy(&len, raw.data() + raw.size() - 16, 8);
  if (len > raw.size() - 16) throw ParseError(p.string() + ": bad footer length");
  const std::size_t body = raw.size() - 16 - len;
  json footer = json::parse(raw.substr(body, len));
  if (body % sizeof(StoreRecord) != 0 || body / sizeof(StoreRecord) != footer.at("records").get<std::uint64_t>())
    throw ParseError(p.string() + ": record count does not match footer");
  std::vector<StoreRecord> out(body / sizeof(StoreRecord));
  std::memcpy(out.data(), raw.data(), body);
  return out;
}

std::vector<StoreRecord> SparseStore::read_all() const {
  std::vector<StoreRecord> out;
  for (std::size_t i = 0; i < meta_.n_shards; ++i) {
    auto part = read_shard(i);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::size_t SparseStore::trajectory_index(std::uint64_t hash) const {
  auto it = hash_to_index_.find(hash);
  if (it == hash_to_index_.end()) throw ParseError("record references unknown trajectory hash " + std::to_string(hash));
  return it->second;
}

void SparseStore::copy_to(const fs::path& out_dir) const {
  std::map<std::uint64_t, std::vector<StoreRecord>> by_traj;
  for (const auto& r : read_all()) by_traj[r.trajectory_hash].push_back(r);
  StoreWriter w(out_dir, meta_);
  for (const auto& t : meta_.trajectories) {
    auto it = by_traj.find(t.hash);
    static const std::vector<StoreRecord> none;
    w.append(t, it == by_traj.end() ? std::span<const StoreRecord>(none) : std::span<const StoreRecord>(it->second));
  }
  w.seal();
}

// ---- feature index ----

bool index_entry_before(const IndexEntry& a, const IndexEntry& b) {
  if (a.value != b.value) return a.value > b.value;
  if (a.trajectory != b.trajectory) return a.trajectory < b.trajectory;
  return a.token_pos < b.token_pos;
}

FeatureIndex::FeatureIndex(std::size_t n_features, std::size_t depth)
    : depth_(depth), top_(n_features), aggregates_(n_features) {}

std::vector<std::uint32_t> FeatureIndex::active_features() const {
  std::vector<std::uint32_t> out;
  for (std::size_t f = 0; f < aggregates_.size(); ++f)
    if (!aggregates_[f].empty()) out.push_back(static_cast<std::uint32_t>(f));
  return out;
}

void FeatureIndex::add(std::uint32_t trajectory, const StoreRecord& r) {
  if (r.feature_id >= top_.size()) throw InvalidArgument("feature id out of range");
  auto& heap = top_[r.feature_id];
  const IndexEntry e{trajectory, r.token_pos, r.value};
  if (depth_ > 0) {
    if (heap.size() < depth_) {
      heap.push_back(e);
      std::push_heap(heap.begin(), heap.end(), index_entry_before);
    } else if (index_entry_before(e, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), index_entry_before);
      heap.back() = e;
      std::push_heap(heap.begin(), heap.end(), index_entry_before);
    }
  }
  auto& aggs = aggregates_[r.feature_id];
  if (aggs.empty() || aggs.back().trajectory != trajectory) aggs.push_back({trajectory, 0, 0.0f, 0.0});
  auto& a = aggs.back();
  a.count += 1;
  a.max = std::max(a.max, r.value);
  a.sum += r.value;
}

void FeatureIndex::merge(const FeatureIndex& other) {
  if (other.top_.size() != top_.size()) throw ShapeError("cannot merge indexes of different widths");
  for (std::size_t f = 0; f < top_.size(); ++f) {
    auto& heap = top_[f];
    for (const auto& e : other.top_[f]) {
      if (heap.size() < depth_) {
        heap.push_back(e);
        std::push_heap(heap.begin(), heap.end(), index_entry_before);
      } else if (depth_ > 0 && index_entry_before(e, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), index_entry_before);
        heap.back() = e;
        std::push_heap(heap.begin(), heap.end(), index_entry_before);
      }
    }
    auto& aggs = aggregates_[f];
    aggs.insert(aggs.end(), other.aggregates_[f].begin(), other.aggregates_[f].end());
  }
}

void FeatureIndex::finalize() {
  for (auto& heap : top_) std::sort(heap.begin(), heap.end(), index_entry_before);
  for (auto& aggs : aggregates_)
    std::sort(aggs.begin(), aggs.end(),
              [](const TrajectoryAggregate& a, const TrajectoryAggregate& b) { return a.trajectory < b.trajectory; });
}

namespace {

void index_shard(const SparseStore& store, std::size_t shard, FeatureIndex& index) {
  for (const auto& r : store.read_shard(shard))
    index.add(static_cast<std::uint32_t>(store.trajectory_index(r.trajectory_hash)), r);
}

}  // namespace

FeatureIndex build_feature_index(const SparseStore& store, std::size_t depth) {
  const std::size_t nf = store.meta().n_features;
  const std::size_t n_shards = store.meta().n_shards;
  const int n_threads = std::max(1, omp_get_max_threads());
  std::vector<FeatureIndex> partial(static_cast<std::size_t>(n_threads), FeatureIndex(nf, depth));
  std::exception_ptr error;
#pragma omp parallel num_threads(n_threads)
  {
    auto& mine = partial[static_cast<std::size_t>(omp_get_thread_num())];
#pragma omp for schedule(dynamic)
    for (std::size_t s = 0; s < n_shards; ++s) {
      try {
        index_shard(store, s, mine);
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
  }
  if (error) std::rethrow_exception(error);
  FeatureIndex out(nf, depth);
  for (const auto& p : partial) out.merge(p);
  out.finalize();
  return out;
}

FeatureIndex build_feature_index_serial(const SparseStore& store, std::size_t depth) {
  FeatureIndex out(store.meta().n_features, depth);
  for (std::size_t s = 0; s < store.meta().n_shards; ++s) index_shard(store, s, out);
  out.finalize();
  return out;
}

std::vector<Example> top_examples(const FeatureIndex& index, const StoreMeta& meta, std::uint32_t feature_id,
                                  std::size_t n) {
  std::vector<Example> out;
  if (feature_id >= index.n_features()) return out;
  const auto& top = index.top(feature_id);
  for (std::size_t i = 0; i < top.size() && i < n; ++i) {
    const auto& e = top[i];
    out.push_back({meta.trajectories.at(e.trajectory).key, e.trajectory, e.token_pos, e.value});
  }
  return out;
}

}  // namespace trajlens
