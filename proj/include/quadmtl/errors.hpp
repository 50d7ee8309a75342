#pragma once

#include <stdexcept>
#include <string>

namespace quadmtl {

/// Base class for every error raised by the library. The CLI maps the
/// category onto its exit code.
class Error : public std::runtime_error {
 public:
  enum class Category { kUsage, kData, kNumeric };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

#define QUADMTL_DEFINE_ERROR(Name, Cat)                          \
  class Name : public Error {                                    \
   public:                                                       \
    explicit Name(const std::string& what)                       \
        : Error(Category::Cat, std::string(#Name ": ") + what) {} \
  };

QUADMTL_DEFINE_ERROR(ConfigError, kUsage)
QUADMTL_DEFINE_ERROR(UnknownTask, kUsage)

QUADMTL_DEFINE_ERROR(BadMagic, kData)
QUADMTL_DEFINE_ERROR(VersionMismatch, kData)
QUADMTL_DEFINE_ERROR(TruncatedFile, kData)
QUADMTL_DEFINE_ERROR(ChecksumMismatch, kData)
QUADMTL_DEFINE_ERROR(ShapeMismatch, kData)
QUADMTL_DEFINE_ERROR(EmptyDataset, kData)
QUADMTL_DEFINE_ERROR(IoError, kData)

QUADMTL_DEFINE_ERROR(Unreachable, kNumeric)
QUADMTL_DEFINE_ERROR(RankDeficient, kNumeric)
QUADMTL_DEFINE_ERROR(DegenerateTruth, kNumeric)
QUADMTL_DEFINE_ERROR(CollectionFailed, kNumeric)

#undef QUADMTL_DEFINE_ERROR

class Diverged : public Error {
 public:
  explicit Diverged(double time)
      : Error(Category::kNumeric,
              "Diverged: simulation state became invalid at t=" + std::to_string(time)),
        time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(int epoch, const std::string& detail)
      : Error(Category::kNumeric,
              "NonFiniteLoss: epoch " + std::to_string(epoch) + ": " + detail),
        epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace quadmtl
