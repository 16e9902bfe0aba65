// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvtf {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Extents of two operands disagree. Both shapes are kept for diagnostics.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, Shape lhs, Shape rhs)
      : Error(op + ": shape mismatch " + to_string(lhs) + " vs " + to_string(rhs)),
        lhs_(std::move(lhs)),
        rhs_(std::move(rhs)) {}
  explicit ShapeError(const std::string& what) : Error(what) {}

  const Shape& lhs() const { return lhs_; }
  const Shape& rhs() const { return rhs_; }

 private:
  Shape lhs_;
  Shape rhs_;
};

class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvtf
