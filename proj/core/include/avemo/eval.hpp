#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "avemo/bundle.hpp"
#include "avemo/world.hpp"

namespace avemo {

struct ItemLog {
  long long id = 0;
  int chosen = 0;
  int correct = 0;
  std::array<double, 4> log_likelihood{};
};

/// Category/average report in the benchmark table's shape. Cell keys are
/// "<modality>/<category>" ("a/OC", "av/Sp-AV", ...). Group averages are the
/// mean of the group's four category accuracies; All is the mean over all
/// twelve cells. Missing pathways (model lacks the required modality) carry
/// no value and print as a dash.
struct EvalReport {
  std::map<std::string, double> cell_acc;
  std::map<std::string, int> cell_n;
  std::optional<double> avg_a, avg_v, avg_av, avg_all;
  std::vector<ItemLog> items;
};

/// Sum of per-token conditional log-probabilities of `option_tokens` given
/// the item's context (question + modality tokens in the span).
double score_option(const ModelBundle& model, const BenchmarkItem& item,
                    const std::vector<int>& option_tokens);

/// Argmax of per-option log-likelihood; exact ties break to the lowest index.
int answer_mcq(const ModelBundle& model, const BenchmarkItem& item);

EvalReport evaluate(const ModelBundle& model,
                    const std::vector<BenchmarkItem>& items,
                    std::optional<Modality> filter = std::nullopt);

/// Harness-level evaluation with an arbitrary answerer (used for the chance
/// and hidden-index oracle self-tests; no log-likelihoods recorded).
EvalReport evaluate_with_answerer(
    const std::vector<BenchmarkItem>& items,
    const std::function<int(const BenchmarkItem&)>& answerer,
    std::optional<Modality> filter = std::nullopt);

/// Fixed column order, one-decimal percentages, dashes for missing cells.
/// `report.v1`.
void write_reports_csv(
    std::ostream& os,
    const std::vector<std::pair<std::string, EvalReport>>& reports);

void write_item_log(std::ostream& os, const EvalReport& report);

extern const std::vector<std::string> kReportColumns;

}  // namespace avemo
