#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>

#include "trajlens/common.hpp"

namespace trajlens::prompts {

namespace detail {
const std::map<std::string, std::string, std::less<>>& builtin_templates();
}

/// Substitutes `{name}` placeholders; `{{` and `}}` produce literal braces.
/// Unknown placeholders throw InvalidArgument. Values are not re-scanned.
std::string format(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// Prompt templates by name. Defaults are compiled in from assets/prompts; a
/// directory of `<name>.txt` files overrides individual templates.
class PromptLibrary {
 public:
  PromptLibrary();
  explicit PromptLibrary(const fs::path& override_dir);

  static const PromptLibrary& builtin();
  const std::string& get(std::string_view name) const;
  std::string render(std::string_view name, const std::map<std::string, std::string>& values) const {
    return format(get(name), values);
  }

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

}  // namespace trajlens::prompts
