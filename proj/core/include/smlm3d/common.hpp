#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace smlm3d {

// Error categories map 1:1 onto the CLI exit-code contract
// (0 success, 2 usage, 3 data, 4 numerical).
enum class ErrorKind { Usage = 2, Data = 3, Numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(ErrorKind::Usage, m) {}
};
struct DataError : Error {
  explicit DataError(const std::string& m) : Error(ErrorKind::Data, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorKind::Numeric, m) {}
};

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (cond) return;
  switch (kind) {
    case ErrorKind::Usage:
      throw UsageError(msg);
    case ErrorKind::Data:
      throw DataError(msg);
    case ErrorKind::Numeric:
      throw NumericError(msg);
  }
  throw Error(kind, msg);
}

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

// A point source: continuous position in nm (x, y from the field-of-view
// corner, z from nominal focus) and its expected signal photon count.
struct Emitter {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double photons = 1.0;
};

// One recovered position. `photons` holds a photon estimate for likelihood
// based localizers and a grid confidence for the decoder path.
struct Localization {
  int frame = 0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double photons = 0.0;
};

}  // namespace smlm3d
