#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trajlens {

namespace fs = std::filesystem;

/// Base of every error thrown by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual std::string_view kind() const noexcept { return "error"; }
};

#define TRAJLENS_DEFINE_ERROR(Name, Kind)                           \
  class Name : public Error {                                       \
   public:                                                          \
    using Error::Error;                                             \
    std::string_view kind() const noexcept override { return Kind; } \
  };

TRAJLENS_DEFINE_ERROR(ParseError, "parse")
TRAJLENS_DEFINE_ERROR(DuplicateKeyError, "duplicate-key")
TRAJLENS_DEFINE_ERROR(ShapeError, "shape")
TRAJLENS_DEFINE_ERROR(InvalidArgument, "invalid-argument")
TRAJLENS_DEFINE_ERROR(MissingActivationError, "missing-activation")
TRAJLENS_DEFINE_ERROR(UndefinedAggregateError, "undefined-aggregate")
TRAJLENS_DEFINE_ERROR(IoError, "io")
TRAJLENS_DEFINE_ERROR(LlmError, "llm")
TRAJLENS_DEFINE_ERROR(InterpError, "interp")
TRAJLENS_DEFINE_ERROR(MetaGroupError, "meta-group")
TRAJLENS_DEFINE_ERROR(ExtractionError, "extraction")
TRAJLENS_DEFINE_ERROR(EvaluationError, "evaluation")

#undef TRAJLENS_DEFINE_ERROR

/// Warnings collected by an operation. Every entry is also sent to the logger.
class Warnings {
 public:
  void add(std::string message);
  const std::vector<std::string>& items() const noexcept { return items_; }
  bool empty() const noexcept { return items_.empty(); }
  void append(const Warnings& other);

 private:
  std::vector<std::string> items_;
};

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, std::string_view contents);
std::vector<char> read_binary(const fs::path& path);

/// Lowercases ASCII letters; other bytes are passed through.
std::string ascii_lower(std::string_view s);
std::string_view trim(std::string_view s);
std::vector<std::string> split_words(std::string_view s);
bool starts_with_ci(std::string_view s, std::string_view prefix);

}  // namespace trajlens
