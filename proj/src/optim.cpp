#include "signclip/optim.hpp"

#include <cmath>

#include "signclip/error.hpp"

namespace signclip {

void AdamW::step(std::span<Tensor* const> params) {
  if (m_.empty()) {
    for (Tensor* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw ContractError("AdamW::step: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (!p.requires_grad()) continue;
    const Matrix& g = p.grad();
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
    Matrix& w = p.mutable_value();
    if (opts_.weight_decay > 0.0) w *= (1.0 - opts_.lr * opts_.weight_decay);
    w.array() -= opts_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
  }
}

}  // namespace signclip
