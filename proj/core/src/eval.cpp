#include "avemo/eval.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace avemo {

namespace {

struct CellDef {
  Modality m;
  Category c;
};

const std::vector<CellDef> kCells = {
    {Modality::Audio, Category::OC},       {Modality::Audio, Category::OE},
    {Modality::Audio, Category::SC},       {Modality::Audio, Category::SE},
    {Modality::Video, Category::OC},       {Modality::Video, Category::OE},
    {Modality::Video, Category::SC},       {Modality::Video, Category::SE},
    {Modality::AudioVisual, Category::SpA}, {Modality::AudioVisual, Category::SpV},
    {Modality::AudioVisual, Category::SpAV}, {Modality::AudioVisual, Category::OE}};

std::string cell_key(Modality m, Category c) {
  return modality_name(m) + "/" + category_name(c);
}

const Tensor* video_ptr(const BenchmarkItem& item) {
  return item.modality == Modality::Audio ? nullptr : &item.video;
}

const Tensor* audio_ptr(const BenchmarkItem& item) {
  return item.modality == Modality::Video ? nullptr : &item.audio;
}

double log_softmax_at(const Tensor& row, int token) {
  double mx = row.data[0];
  for (double v : row.data) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : row.data) z += std::exp(v - mx);
  return row.data[token] - mx - std::log(z);
}

void finish_report(EvalReport& r,
                   const std::map<std::string, std::pair<int, int>>& tallies) {
  for (const auto& [key, t] : tallies) {
    r.cell_n[key] = t.second;
    r.cell_acc[key] = t.second ? static_cast<double>(t.first) / t.second : 0.0;
  }
  auto group_avg = [&](Modality m) -> std::optional<double> {
    double sum = 0.0;
    for (const CellDef& cd : kCells) {
      if (cd.m != m) continue;
      auto it = r.cell_acc.find(cell_key(cd.m, cd.c));
      if (it == r.cell_acc.end()) return std::nullopt;
      sum += it->second;
    }
    return sum / 4.0;
  };
  r.avg_a = group_avg(Modality::Audio);
  r.avg_v = group_avg(Modality::Video);
  r.avg_av = group_avg(Modality::AudioVisual);
  if (r.avg_a && r.avg_v && r.avg_av) {
    double sum = 0.0;
    for (const CellDef& cd : kCells) sum += r.cell_acc.at(cell_key(cd.m, cd.c));
    r.avg_all = sum / kCells.size();
  }
}

template <typename Answer>
EvalReport run_eval(const std::vector<BenchmarkItem>& items,
                    std::optional<Modality> filter, Answer&& answer) {
  EvalReport r;
  std::map<std::string, std::pair<int, int>> tallies;  // key -> (hits, n)
  for (const BenchmarkItem& item : items) {
    if (filter && item.modality != *filter) continue;
    ItemLog log;
    log.id = item.id;
    log.correct = item.correct;
    if (!answer(item, log)) continue;
    auto& t = tallies[cell_key(item.modality, item.category)];
    t.first += (log.chosen == log.correct) ? 1 : 0;
    t.second += 1;
    r.items.push_back(log);
  }
  finish_report(r, tallies);
  return r;
}

}  // namespace

double score_option(const ModelBundle& model, const BenchmarkItem& item,
                    const std::vector<int>& option_tokens) {
  if (option_tokens.empty())
    throw std::invalid_argument("score_option: empty option");
  Tape tape;
  ParamCtx ctx(tape);
  Var z = model.tokens(ctx, item.modality, video_ptr(item), audio_ptr(item));
  PromptLayout lay = model.make_layout(item.modality, item.question, option_tokens);
  auto logits = model.lm().response_logits(ctx, lay, z);
  const Tensor& L = logits->val();
  int V = L.cols();
  double ll = 0.0;
  for (size_t t = 0; t < option_tokens.size(); ++t) {
    Tensor row({V});
    for (int j = 0; j < V; ++j) row.at(j) = L.at(static_cast<int>(t), j);
    ll += log_softmax_at(row, option_tokens[t]);
  }
  return ll;
}

int answer_mcq(const ModelBundle& model, const BenchmarkItem& item) {
  if (item.options.size() != 4)
    throw std::invalid_argument("answer_mcq: expected 4 options");
  // All options are single tokens, so one teacher-forced pass suffices: the
  // row predicting the first response position is shared across options.
  Tape tape;
  ParamCtx ctx(tape);
  Var z = model.tokens(ctx, item.modality, video_ptr(item), audio_ptr(item));
  PromptLayout lay =
      model.make_layout(item.modality, item.question, {item.options[0]});
  auto logits = model.lm().response_logits(ctx, lay, z);
  const Tensor& L = logits->val();
  int V = L.cols();
  Tensor row({V});
  for (int j = 0; j < V; ++j) row.at(j) = L.at(0, j);
  int best = 0;
  double best_ll = log_softmax_at(row, item.options[0]);
  for (int k = 1; k < 4; ++k) {
    double ll = log_softmax_at(row, item.options[k]);
    if (ll > best_ll) {
      best = k;
      best_ll = ll;
    }
  }
  return best;
}

EvalReport evaluate(const ModelBundle& model,
                    const std::vector<BenchmarkItem>& items,
                    std::optional<Modality> filter) {
  return run_eval(items, filter, [&](const BenchmarkItem& item, ItemLog& log) {
    if (!model.supports(item.modality)) return false;
    Tape tape;
    ParamCtx ctx(tape);
    Var z = model.tokens(ctx, item.modality, video_ptr(item), audio_ptr(item));
    PromptLayout lay =
        model.make_layout(item.modality, item.question, {item.options[0]});
    auto logits = model.lm().response_logits(ctx, lay, z);
    const Tensor& L = logits->val();
    int V = L.cols();
    Tensor row({V});
    for (int j = 0; j < V; ++j) row.at(j) = L.at(0, j);
    int best = 0;
    for (int k = 0; k < 4; ++k) {
      log.log_likelihood[k] = log_softmax_at(row, item.options[k]);
      if (log.log_likelihood[k] > log.log_likelihood[best]) best = k;
    }
    log.chosen = best;
    return true;
  });
}

EvalReport evaluate_with_answerer(
    const std::vector<BenchmarkItem>& items,
    const std::function<int(const BenchmarkItem&)>& answerer,
    std::optional<Modality> filter) {
  return run_eval(items, filter, [&](const BenchmarkItem& item, ItemLog& log) {
    log.chosen = answerer(item);
    return true;
  });
}

const std::vector<std::string> kReportColumns = {
    "model",    "a/OC",    "a/OE",    "a/SC",    "a/SE",      "avg_a",
    "v/OC",     "v/OE",    "v/SC",    "v/SE",    "avg_v",     "av/Sp-A",
    "av/Sp-V",  "av/Sp-AV", "av/OE",  "avg_av",  "avg_all"};

namespace {

std::string pct(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *v);
  return buf;
}

std::optional<double> cell_of(const EvalReport& r, const std::string& key) {
  auto it = r.cell_acc.find(key);
  if (it == r.cell_acc.end()) return std::nullopt;
  return it->second;
}

}  // namespace

void write_reports_csv(
    std::ostream& os,
    const std::vector<std::pair<std::string, EvalReport>>& reports) {
  os << "# report.v1\n";
  for (size_t i = 0; i < kReportColumns.size(); ++i)
    os << (i ? "," : "") << kReportColumns[i];
  os << "\n";
  for (const auto& [name, r] : reports) {
    os << name;
    for (size_t i = 1; i < kReportColumns.size(); ++i) {
      const std::string& col = kReportColumns[i];
      std::optional<double> v;
      if (col == "avg_a") v = r.avg_a;
      else if (col == "avg_v") v = r.avg_v;
      else if (col == "avg_av") v = r.avg_av;
      else if (col == "avg_all") v = r.avg_all;
      else v = cell_of(r, col);
      os << "," << pct(v);
    }
    os << "\n";
  }
}

void write_item_log(std::ostream& os, const EvalReport& report) {
  for (const ItemLog& it : report.items) {
    nlohmann::json j;
    j["schema"] = "itemlog.v1";
    j["id"] = it.id;
    j["chosen"] = it.chosen;
    j["correct"] = it.correct;
    j["ll"] = it.log_likelihood;
    os << j.dump() << "\n";
  }
}

}  // namespace avemo
