#pragma once

#include <stdexcept>
#include <string>

namespace pcqa {

// Every error carries a short machine-readable kind ("truncated", "bad-mos", ...)
// alongside the human-readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string category, std::string kind, const std::string& detail)
      : std::runtime_error(category + "(" + kind + ")" + (detail.empty() ? "" : ": " + detail)),
        category_(std::move(category)),
        kind_(std::move(kind)) {}

  const std::string& category() const noexcept { return category_; }
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string category_;
  std::string kind_;
};

#define PCQA_DEFINE_ERROR(Name)                                         \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(std::string kind, const std::string& detail = {})     \
        : Error(#Name, std::move(kind), detail) {}                      \
  };

PCQA_DEFINE_ERROR(ParseError)
PCQA_DEFINE_ERROR(ManifestError)
PCQA_DEFINE_ERROR(PartitionError)
PCQA_DEFINE_ERROR(GraphError)
PCQA_DEFINE_ERROR(ShapeError)
PCQA_DEFINE_ERROR(NumericsError)
PCQA_DEFINE_ERROR(TapeError)
PCQA_DEFINE_ERROR(TrainError)
PCQA_DEFINE_ERROR(CheckpointError)
PCQA_DEFINE_ERROR(EvalError)
PCQA_DEFINE_ERROR(ConfigError)

#undef PCQA_DEFINE_ERROR

}  // namespace pcqa
