#pragma once

#include <stdexcept>
#include <string>

namespace lgrin {

/// Root of every error the library throws. The `exit_code` maps onto the
/// CLI convention: 1 usage/config, 2 data, 3 numerical.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, int exit_code = 1)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what, 1) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& what) : Error("index error: " + what, 1) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract error: " + what, 1) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error: " + what, 1) {}
};

class LoadError : public Error {
 public:
  explicit LoadError(const std::string& what) : Error("load error: " + what, 2) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical error: " + what, 3) {}
};

}  // namespace lgrin
