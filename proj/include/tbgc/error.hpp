#pragma once

#include <stdexcept>
#include <string>

namespace tbgc {

// Base class of all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeMismatch : public Error {
public:
  explicit ShapeMismatch(const std::string& msg) : Error("shape mismatch: " + msg) {}
};

class IndexOutOfRange : public Error {
public:
  explicit IndexOutOfRange(const std::string& msg) : Error("index out of range: " + msg) {}
};

class NonScalarLoss : public Error {
public:
  explicit NonScalarLoss(const std::string& msg) : Error("non-scalar loss: " + msg) {}
};

class EmptyTape : public Error {
public:
  explicit EmptyTape(const std::string& msg) : Error("empty tape: " + msg) {}
};

// Tape was already consumed by backward(); recording further ops is a
// programming error, not a data error.
class TapeReleased : public std::logic_error {
public:
  explicit TapeReleased(const std::string& msg) : std::logic_error("tape released: " + msg) {}
};

class DegenerateFeature : public Error {
public:
  explicit DegenerateFeature(const std::string& msg) : Error("degenerate feature: " + msg) {}
};

class AlignmentError : public Error {
public:
  explicit AlignmentError(const std::string& msg) : Error("gradient/parameter misalignment: " + msg) {}
};

class MultipleStrongOps : public Error {
public:
  explicit MultipleStrongOps(const std::string& msg) : Error("branch holds more than one strong op: " + msg) {}
};

class InsufficientSamples : public Error {
public:
  explicit InsufficientSamples(const std::string& msg) : Error("insufficient partner samples: " + msg) {}
};

class CropLargerThanImage : public Error {
public:
  explicit CropLargerThanImage(const std::string& msg) : Error("crop larger than image: " + msg) {}
};

// Augmented sample violated a label invariant (e.g. box fully cropped away).
// Callers count these and fall back to the untransformed sample.
class SampleRejected : public Error {
public:
  explicit SampleRejected(const std::string& msg) : Error("augmented sample rejected: " + msg) {}
};

class InvalidConfig : public Error {
public:
  explicit InvalidConfig(const std::string& msg) : Error("invalid config: " + msg) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

} // namespace tbgc
