#include "avemo/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace avemo {

FrozenEncoder::FrozenEncoder(ParamStore& store, const std::string& group,
                             int rows_in, int d_in, int rows_out, int d_out,
                             uint64_t seed)
    : rows_in_(rows_in), d_in_(d_in), rows_out_(rows_out), d_out_(d_out) {
  Rng rng(seed);
  seq_mix_ = &store.add(group + ".seq_mix", group,
                        rng.gaussian_tensor({rows_out, rows_in},
                                            1.0 / std::sqrt(double(rows_in))),
                        /*frozen=*/true);
  chan_proj_ = &store.add(group + ".chan_proj", group,
                          rng.gaussian_tensor({d_in, d_out},
                                              1.0 / std::sqrt(double(d_in))),
                          /*frozen=*/true);
}

Tensor FrozenEncoder::encode(const Tensor& raw) const {
  if (raw.rank() != 2 || raw.rows() != rows_in_ || raw.cols() != d_in_)
    throw std::invalid_argument("FrozenEncoder: input shape " + raw.shape_str() +
                                " does not match [" + std::to_string(rows_in_) +
                                "," + std::to_string(d_in_) + "]");
  const Tensor& S = seq_mix_->value;
  const Tensor& C = chan_proj_->value;
  Tensor mixed({rows_out_, d_in_});
  for (int i = 0; i < rows_out_; ++i)
    for (int j = 0; j < d_in_; ++j) {
      double s = 0.0;
      for (int p = 0; p < rows_in_; ++p) s += S.at(i, p) * raw.at(p, j);
      mixed.at(i, j) = std::tanh(s);
    }
  Tensor out({rows_out_, d_out_});
  for (int i = 0; i < rows_out_; ++i)
    for (int j = 0; j < d_out_; ++j) {
      double s = 0.0;
      for (int p = 0; p < d_in_; ++p) s += mixed.at(i, p) * C.at(p, j);
      out.at(i, j) = s;
    }
  if (!out.finite()) throw std::runtime_error("FrozenEncoder: non-finite output");
  return out;
}

}  // namespace avemo
