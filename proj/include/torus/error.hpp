// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace torus {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grid dimensions inconsistent with the rank count, or a malformed grid string.
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

/// Buffer lengths or element types of two operands disagree.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FrameError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class InvalidDestination : public TransportError {
 public:
  using TransportError::TransportError;
};

class FabricClosed : public TransportError {
 public:
  using TransportError::TransportError;
};

class TransportTimeout : public TransportError {
 public:
  using TransportError::TransportError;
};

}  // namespace torus
