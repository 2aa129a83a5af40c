#pragma once

#include <cstdint>
#include <ostream>
#include <string>

#include "mixuplr/error.hpp"
#include "mixuplr/format.hpp"
#include "mixuplr/loss_heads.hpp"
#include "mixuplr/mlp.hpp"
#include "mixuplr/random.hpp"
#include "mixuplr/trainer.hpp"

namespace mixuplr {

struct AttackReport {
  double epsilon = 0.0;
  double clean_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
  double percent_drop = 0.0;  // 100 (clean - adv) / clean
  std::size_t n_examples = 0;
  std::uint64_t seed = 0;
};

/// Fast gradient sign step x + eps * sign(grad_x CE(softmax(f(x)), y)), with
/// sign(0) = 0. Inputs are not clipped afterwards.
inline Tensor fgsm(const Mlp& model, const Tensor& x, const Tensor& y_onehot, double epsilon) {
  if (!(epsilon >= 0.0)) throw DomainError("fgsm: epsilon must be >= 0");
  const Tensor g = model.input_gradient(x, SoftTargetCrossEntropy{y_onehot, {}});
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    out[i] += epsilon * s;
  }
  return out;
}

/// Clean vs FGSM accuracy on the same examples (untargeted, true labels).
/// The attack is deterministic; `rng` only contributes its seed to the report.
inline AttackReport attack_eval(const Mlp& model, const Tensor& features, const Tensor& labels, double epsilon,
                                const RngState& rng) {
  if (features.rows() == 0) throw DomainError("attack_eval: empty evaluation set");
  AttackReport rep;
  rep.epsilon = epsilon;
  rep.n_examples = features.rows();
  rep.seed = rng.seed();
  rep.clean_accuracy = evaluate(model, features, labels).accuracy;
  rep.adversarial_accuracy = evaluate(model, fgsm(model, features, labels, epsilon), labels).accuracy;
  rep.percent_drop =
      rep.clean_accuracy > 0.0 ? 100.0 * (rep.clean_accuracy - rep.adversarial_accuracy) / rep.clean_accuracy : 0.0;
  return rep;
}

inline constexpr std::string_view kAttackCsvHeader = "epsilon,clean,adv,drop,seed,mode";

inline void write_attack_row(std::ostream& os, const AttackReport& r, std::string_view mode) {
  os << format_float(r.epsilon) << ',' << format_float(r.clean_accuracy) << ',' << format_float(r.adversarial_accuracy)
     << ',' << format_float(r.percent_drop) << ',' << r.seed << ',' << mode << '\n';
}

}  // namespace mixuplr
