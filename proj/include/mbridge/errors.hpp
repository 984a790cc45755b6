#pragma once

#include <stdexcept>
#include <string>

namespace mbridge {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape/dimension mismatches, malformed inputs, invalid measures.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Marginals are not in convex order (no martingale coupling exists), or a
// Gaussian pair has singular/indefinite covariance increment.
class NotInConvexOrder : public Error {
 public:
  using Error::Error;
};

// A start point lies on the relative boundary of conv(supp nu): the inner
// dual supremum is not attained.
class NotIrreducible : public Error {
 public:
  explicit NotIrreducible(const std::string& what, long fiber = -1)
      : Error(what), fiber_(fiber) {}
  long fiber() const { return fiber_; }

 private:
  long fiber_;
};

class DualDivergence : public Error {
 public:
  explicit DualDivergence(const std::string& what, long fiber = -1)
      : Error(what), fiber_(fiber) {}
  long fiber() const { return fiber_; }

 private:
  long fiber_;
};

class DegenerateFiber : public Error {
 public:
  explicit DegenerateFiber(const std::string& what, long fiber = -1)
      : Error(what), fiber_(fiber) {}
  long fiber() const { return fiber_; }

 private:
  long fiber_;
};

class NotConverged : public Error {
 public:
  using Error::Error;
};

class TerminalAmbiguity : public Error {
 public:
  using Error::Error;
};

class InfeasibleParameters : public Error {
 public:
  using Error::Error;
};

// Quadrature / root finding failed to reach the requested accuracy.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, double achieved)
      : Error(what), achieved_(achieved) {}
  double achieved() const { return achieved_; }

 private:
  double achieved_;
};

}  // namespace mbridge
