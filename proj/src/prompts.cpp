#include "trajlens/prompts.hpp"

#include <cctype>

namespace trajlens::prompts {

std::string format(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const char c = tmpl[i];
    if (c == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
      out.push_back('{');
      i += 2;
      continue;
    }
    if (c == '}' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
      out.push_back('}');
      i += 2;
      continue;
    }
    if (c == '{') {
      std::size_t j = i + 1;
      while (j < tmpl.size() && (std::isalnum(static_cast<unsigned char>(tmpl[j])) || tmpl[j] == '_')) ++j;
      if (j > i + 1 && j < tmpl.size() && tmpl[j] == '}') {
        const std::string name(tmpl.substr(i + 1, j - i - 1));
        auto it = values.find(name);
        if (it == values.end()) throw InvalidArgument("prompt placeholder {" + name + "} has no value");
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out.push_back(c);
    ++i;
  }
  return out;
}

PromptLibrary::PromptLibrary() {
  for (const auto& [name, text] : detail::builtin_templates()) templates_.emplace(name, text);
}

PromptLibrary::PromptLibrary(const fs::path& override_dir) : PromptLibrary() {
  if (!fs::is_directory(override_dir)) throw IoError("prompt directory not found: " + override_dir.string());
  for (const auto& e : fs::directory_iterator(override_dir))
    if (e.is_regular_file() && e.path().extension() == ".txt")
      templates_[e.path().stem().string()] = read_file(e.path());
}

const PromptLibrary& PromptLibrary::builtin() {
  static const PromptLibrary lib;
  return lib;
}

const std::string& PromptLibrary::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw InvalidArgument("unknown prompt template '" + std::string(name) + "'");
  return it->second;
}

}  // namespace trajlens::prompts
