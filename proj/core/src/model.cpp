#include "avemo/model.hpp"

#include <cmath>
#include <stdexcept>

#include "avemo/vocab.hpp"

namespace avemo {

void ToyLMConfig::validate() const {
  if (d_model % n_heads != 0)
    throw std::invalid_argument("ToyLMConfig: d_model not divisible by n_heads");
  if (vocab_size < 8) throw std::invalid_argument("ToyLMConfig: vocab_size < 8");
  if ((d_model / n_heads) % 2 != 0)
    throw std::invalid_argument("ToyLMConfig: head dim must be even for rope");
}

std::vector<int> rope_positions(const PromptLayout& layout) {
  if (layout.span_len < 0) throw std::invalid_argument("rope_positions: bad span");
  std::vector<int> pos(static_cast<size_t>(layout.total_len()));
  for (size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  return pos;
}

ToyLM ToyLM::init(ParamStore& store, const ToyLMConfig& cfg, uint64_t seed,
                  const std::string& group) {
  cfg.validate();
  ToyLM lm;
  lm.cfg_ = cfg;
  Rng rng(seed);
  int d = cfg.d_model, V = cfg.vocab_size;
  int hidden = 2 * d;
  const double ws = 0.1;
  auto mat = [&](std::vector<int> s) { return rng.gaussian_tensor(std::move(s), ws); };

  lm.tok_embed_ = &store.add(group + ".tok_embed", group, mat({V, d}));
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string pre = group + ".layer" + std::to_string(l) + ".";
    Layer lay{};
    lay.wq = &store.add(pre + "attn.wq", group, mat({d, d}));
    lay.bq = &store.add(pre + "attn.bq", group, Tensor({d}));
    lay.wk = &store.add(pre + "attn.wk", group, mat({d, d}));
    lay.bk = &store.add(pre + "attn.bk", group, Tensor({d}));
    lay.wv = &store.add(pre + "attn.wv", group, mat({d, d}));
    lay.bv = &store.add(pre + "attn.bv", group, Tensor({d}));
    lay.wo = &store.add(pre + "attn.wo", group, mat({d, d}));
    lay.bo = &store.add(pre + "attn.bo", group, Tensor({d}));
    lay.ln1_g = &store.add(pre + "ln1.gamma", group, Tensor::full({d}, 1.0));
    lay.ln1_b = &store.add(pre + "ln1.beta", group, Tensor({d}));
    lay.ln2_g = &store.add(pre + "ln2.gamma", group, Tensor::full({d}, 1.0));
    lay.ln2_b = &store.add(pre + "ln2.beta", group, Tensor({d}));
    lay.w_up = &store.add(pre + "mlp.w_up", group, mat({d, hidden}));
    lay.b_up = &store.add(pre + "mlp.b_up", group, Tensor({hidden}));
    lay.w_down = &store.add(pre + "mlp.w_down", group, mat({hidden, d}));
    lay.b_down = &store.add(pre + "mlp.b_down", group, Tensor({d}));
    lm.layers_.push_back(lay);
  }
  lm.lnf_g_ = &store.add(group + ".lnf.gamma", group, Tensor::full({d}, 1.0));
  lm.lnf_b_ = &store.add(group + ".lnf.beta", group, Tensor({d}));
  lm.unembed_ = &store.add(group + ".unembed", group, mat({d, V}));
  return lm;
}

void ToyLM::lora_wrap(ParamStore& store, int rank, double alpha,
                      const std::string& group) {
  if (rank < 1) throw std::invalid_argument("lora_wrap: rank < 1");
  if (rank > cfg_.d_model) throw std::invalid_argument("lora_wrap: rank > d");
  if (lora_wrapped_) throw std::logic_error("lora_wrap: already wrapped");
  Rng rng(Rng::splitmix(0x10aaULL));
  int d = cfg_.d_model;
  double astd = 1.0 / std::sqrt(static_cast<double>(d));
  auto make = [&](const std::string& name) {
    LoRABranch br;
    br.A = &store.add(group + "." + name + ".A", group,
                      rng.gaussian_tensor({d, rank}, astd));
    br.B = &store.add(group + "." + name + ".B", group, Tensor({rank, d}));
    br.rank = rank;
    br.alpha = alpha;
    return br;
  };
  for (size_t l = 0; l < layers_.size(); ++l) {
    std::string pre = "layer" + std::to_string(l) + ".";
    layers_[l].lora_q = make(pre + "q");
    layers_[l].lora_k = make(pre + "k");
    layers_[l].lora_v = make(pre + "v");
    layers_[l].lora_o = make(pre + "o");
  }
  lora_wrapped_ = true;
}

long long ToyLM::lora_param_count() const {
  if (!lora_wrapped_) return 0;
  long long r = layers_[0].lora_q->rank;
  return static_cast<long long>(layers_.size()) * 4 * 2 * cfg_.d_model * r;
}

Var ToyLM::project(ParamCtx& ctx, Var x, Parameter* w, Parameter* b,
                   const std::optional<LoRABranch>& lora) const {
  Tape& t = ctx.tape;
  Var y = t.add_rowvec(t.matmul(x, ctx(*w)), ctx(*b));
  if (lora) {
    Var low = t.matmul(t.matmul(x, ctx(*lora->A)), ctx(*lora->B));
    y = t.add(y, t.scale(low, lora->alpha / lora->rank));
  }
  return y;
}

Var ToyLM::forward(ParamCtx& ctx, const PromptLayout& layout,
                   std::optional<Var> modality) const {
  Tape& t = ctx.tape;
  int n = layout.total_len();
  if (n == 0) throw std::invalid_argument("forward: empty sequence");
  if (n > cfg_.max_seq_len)
    throw std::invalid_argument("forward: sequence length " + std::to_string(n) +
                                " exceeds max_seq_len");
  if (layout.span_len > 0) {
    if (!modality) throw std::invalid_argument("forward: span without modality");
    const Tensor& M = modality->val();
    if (M.rank() != 2 || M.rows() != layout.span_len || M.cols() != cfg_.d_model)
      throw std::invalid_argument("forward: modality shape mismatch");
  } else if (modality) {
    throw std::invalid_argument("forward: modality without span");
  }

  // Embedding stream: [pre][span][post+response].
  std::vector<Var> parts;
  Var table = ctx(*tok_embed_);
  if (!layout.pre_tokens.empty())
    parts.push_back(t.gather_rows(table, layout.pre_tokens));
  if (layout.span_len > 0) parts.push_back(*modality);
  std::vector<int> tail = layout.post_tokens;
  tail.insert(tail.end(), layout.response.begin(), layout.response.end());
  if (!tail.empty()) parts.push_back(t.gather_rows(table, tail));
  Var x = parts.size() == 1 ? parts[0] : t.concat_rows(parts);

  std::vector<int> pos = rope_positions(layout);
  int dh = cfg_.d_model / cfg_.n_heads;
  double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // causal mask: scores[i][j] masked for j > i
  Tensor mask({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) mask.at(i, j) = -1e30;

  for (const Layer& lay : layers_) {
    Var h = t.layer_norm(x, ctx(*lay.ln1_g), ctx(*lay.ln1_b), 1e-5);
    Var q = t.rope(project(ctx, h, lay.wq, lay.bq, lay.lora_q), pos,
                   cfg_.n_heads, cfg_.rope_base);
    Var k = t.rope(project(ctx, h, lay.wk, lay.bk, lay.lora_k), pos,
                   cfg_.n_heads, cfg_.rope_base);
    Var v = project(ctx, h, lay.wv, lay.bv, lay.lora_v);
    std::vector<Var> heads;
    for (int hd = 0; hd < cfg_.n_heads; ++hd) {
      Var qh = t.slice_cols(q, hd * dh, (hd + 1) * dh);
      Var kh = t.slice_cols(k, hd * dh, (hd + 1) * dh);
      Var vh = t.slice_cols(v, hd * dh, (hd + 1) * dh);
      Var scores = t.scale(t.matmul(qh, t.transpose(kh)), att_scale);
      Var probs = t.softmax_rows(t.add_const(scores, mask), 1.0);
      heads.push_back(t.matmul(probs, vh));
    }
    Var att = t.concat_cols(heads);
    x = t.add(x, project(ctx, att, lay.wo, lay.bo, lay.lora_o));
    Var h2 = t.layer_norm(x, ctx(*lay.ln2_g), ctx(*lay.ln2_b), 1e-5);
    Var up = t.gelu(t.add_rowvec(t.matmul(h2, ctx(*lay.w_up)), ctx(*lay.b_up)));
    Var down = t.add_rowvec(t.matmul(up, ctx(*lay.w_down)), ctx(*lay.b_down));
    x = t.add(x, down);
  }
  Var hf = t.layer_norm(x, ctx(*lnf_g_), ctx(*lnf_b_), 1e-5);
  return t.matmul(hf, ctx(*unembed_));
}

std::optional<Var> ToyLM::response_logits(ParamCtx& ctx,
                                          const PromptLayout& layout,
                                          std::optional<Var> modality) const {
  int T = static_cast<int>(layout.response.size());
  if (T == 0) return std::nullopt;
  Var logits = forward(ctx, layout, modality);
  int resp_start = layout.total_len() - T;
  // row (p-1) predicts the token at position p
  return ctx.tape.slice_rows(logits, resp_start - 1, resp_start - 1 + T);
}

std::vector<int> ToyLM::greedy_decode(const PromptLayout& prompt,
                                      ParamStore& store,
                                      std::optional<Tensor> modality,
                                      int max_len) const {
  (void)store;
  PromptLayout lay = prompt;
  lay.response.clear();
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    Tape tape;
    ParamCtx ctx(tape);
    std::optional<Var> mv;
    if (modality) mv = tape.constant(*modality);
    Var logits = forward(ctx, lay, mv);
    const Tensor& L = logits.val();
    int last = L.rows() - 1;
    int best = 0;
    for (int j = 1; j < L.cols(); ++j)
      if (L.at(last, j) > L.at(last, best)) best = j;
    if (best == tok::kEos) break;
    out.push_back(best);
    lay.response.push_back(best);
    if (lay.total_len() >= cfg_.max_seq_len) break;
  }
  return out;
}

}  // namespace avemo
