#include "avemo/distill.hpp"

#include <cmath>

namespace avemo {

Tensor tempered_softmax(const Tensor& logits_row, double temperature) {
  if (temperature <= 0.0)
    throw std::invalid_argument("tempered_softmax: temperature must be > 0");
  Tensor p(logits_row.shape);
  double mx = -1e300;
  for (double v : logits_row.data) mx = std::max(mx, v / temperature);
  double z = 0.0;
  for (size_t i = 0; i < p.data.size(); ++i) {
    p.data[i] = std::exp(logits_row.data[i] / temperature - mx);
    z += p.data[i];
  }
  for (auto& v : p.data) v /= z;
  return p;
}

double kl_divergence(const Tensor& p, const Tensor& q) {
  if (!p.same_shape(q)) throw std::invalid_argument("kl: shape mismatch");
  auto check_dist = [](const Tensor& d, const char* who) {
    double s = 0.0;
    for (double v : d.data) {
      if (v < 0.0) throw std::invalid_argument(std::string("kl: negative ") + who);
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw std::invalid_argument(std::string("kl: ") + who + " not a distribution");
  };
  check_dist(p, "p");
  check_dist(q, "q");
  double kl = 0.0;
  for (size_t i = 0; i < p.data.size(); ++i) {
    if (p.data[i] <= 0.0) continue;
    if (q.data[i] <= 0.0)
      throw std::invalid_argument("kl: support violation (q=0 where p>0)");
    kl += p.data[i] * std::log(p.data[i] / q.data[i]);
  }
  return kl;
}

Var vg_loss(Tape& tape, const Tensor& teacher_logits, Var student_logits,
            double temperature) {
  const Tensor& S = student_logits.val();
  if (teacher_logits.rank() != 2 || !teacher_logits.same_shape(S))
    throw std::invalid_argument("vg_loss: teacher/student shape mismatch");
  int T = teacher_logits.rows(), V = teacher_logits.cols();
  if (T == 0) throw std::invalid_argument("vg_loss: empty assistant sequence");
  std::optional<Var> acc;
  for (int t = 0; t < T; ++t) {
    Tensor trow({V});
    for (int j = 0; j < V; ++j) trow.at(j) = teacher_logits.at(t, j);
    Tensor p = tempered_softmax(trow, temperature);
    Var srow = tape.reshape(tape.slice_rows(student_logits, t, t + 1), {V});
    Var ce = tape.soft_cross_entropy(p, srow, temperature);
    acc = acc ? tape.add(*acc, ce) : ce;
  }
  return tape.scale(*acc, 1.0 / T);
}

double vg_kl(const Tensor& teacher_logits, const Tensor& student_logits,
             double temperature) {
  if (!teacher_logits.same_shape(student_logits))
    throw std::invalid_argument("vg_kl: shape mismatch");
  int T = teacher_logits.rows(), V = teacher_logits.cols();
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    Tensor trow({V}), srow({V});
    for (int j = 0; j < V; ++j) {
      trow.at(j) = teacher_logits.at(t, j);
      srow.at(j) = student_logits.at(t, j);
    }
    total += kl_divergence(tempered_softmax(trow, temperature),
                           tempered_softmax(srow, temperature));
  }
  return total / T;
}

Var feature_align_loss(Tape& tape, Var z_a, const Tensor& z_v) {
  // Take numel before pushing ops: val() references tape storage, which may
  // reallocate as nodes are added.
  long long n = z_a.val().numel();
  if (!z_a.val().same_shape(z_v))
    throw std::invalid_argument("feature_align_loss: shape mismatch");
  Var diff = tape.sub(z_a, tape.constant(z_v));
  return tape.scale(tape.sum_sq(diff), 1.0 / static_cast<double>(n));
}

std::vector<int> teacher_rollout(const ModelBundle& teacher,
                                 const Tensor& video,
                                 const std::vector<int>& question,
                                 int max_len) {
  Tape tape;
  ParamCtx ctx(tape);
  Tensor z_v = teacher.tokens(ctx, Modality::Video, &video, nullptr).val();
  PromptLayout lay = teacher.make_layout(Modality::Video, question, {});
  return teacher.lm().greedy_decode(lay, const_cast<ParamStore&>(teacher.store()),
                                    z_v, max_len);
}

}  // namespace avemo
