#pragma once

#include <memory>

#include "mbgdd/nn.hpp"

namespace mbgdd {

/// Data-fidelity term ||H(Y) - M(V A)||_F^2 of a task, as a function of the
/// subspace coefficients A (B~ x N).
class DataFidelity {
 public:
  virtual ~DataFidelity() = default;
  virtual int coefficients() const = 0;
  virtual int height() const = 0;
  virtual int width() const = 0;
  /// Returns the loss; writes its gradient w.r.t. A when grad is non-null.
  virtual double evaluate(const Matrix& a, Matrix* grad) const = 0;
};

/// One forward evaluation of a generator, retaining what the backward pass needs.
class GeneratorPass {
 public:
  virtual ~GeneratorPass() = default;
  /// D(Z) as a B~ x N matrix.
  virtual const Matrix& output() const = 0;
  /// J^T grad_out with respect to the latent code.
  virtual FeatureMap latent_gradient(const Matrix& grad_out) = 0;
};

/// The generative mapping D(.) from a latent code to subspace coefficients.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::unique_ptr<GeneratorPass> run(const FeatureMap& z) const = 0;
  Matrix generate(const FeatureMap& z) const { return run(z)->output(); }
};

}  // namespace mbgdd
