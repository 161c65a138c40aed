#pragma once

#include <vector>

#include "avemo/autodiff.hpp"
#include "avemo/bundle.hpp"

namespace avemo {

/// Softmax of logits / temperature (plain tensor math, no graph).
Tensor tempered_softmax(const Tensor& logits_row, double temperature);

/// KL(p || q) = sum p_i log(p_i / q_i). Errors if q vanishes where p > 0.
double kl_divergence(const Tensor& p, const Tensor& q);

/// Distribution-alignment loss of the two pathways: mean over assistant
/// positions of the soft cross-entropy between tempered teacher and student
/// distributions. The teacher side is a detached constant.
Var vg_loss(Tape& tape, const Tensor& teacher_logits, Var student_logits,
            double temperature);

/// Mean KL(teacher || student) over assistant positions, tempered to match
/// the training objective. Metric only.
double vg_kl(const Tensor& teacher_logits, const Tensor& student_logits,
             double temperature);

/// The feature-alignment baseline: mean squared elementwise difference.
Var feature_align_loss(Tape& tape, Var z_a, const Tensor& z_v);

/// Greedy teacher rollout conditioned on (prompt, z_v); empty when the
/// teacher emits EOS first.
std::vector<int> teacher_rollout(const ModelBundle& teacher,
                                 const Tensor& video,
                                 const std::vector<int>& question, int max_len);

}  // namespace avemo
