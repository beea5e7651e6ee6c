#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "tonguerx/lda.hpp"

namespace tonguerx::metrics {

/// Herb sets are sorted unique id vectors, the same representation the topic
/// model uses for prescriptions.
using HerbSet = std::vector<std::size_t>;
using SetPair = std::pair<HerbSet, HerbSet>;  // generated, real

struct SampleSimilarity {
  std::size_t nc = 0;  // shared herbs
  std::size_t np = 0;  // generated size
  std::size_t ng = 0;  // real size
  double p = 0.0;
  double r = 0.0;
  double iou = 0.0;
};

/// p = nc/np (0 when the generated set is empty), r = nc/ng,
/// iou = nc/(np+ng-nc). The real set must be non-empty.
SampleSimilarity similarity(const HerbSet& generated, const HerbSet& real);

struct CountMetrics {
  double nb_p = 0.0;  // mean generated size
  double nb_c = 0.0;  // mean shared-herb count
  double nb_d = 0.0;  // |mean generated size - mean real size|
  double nb_d_mean_abs = 0.0;  // mean |generated size - real size|, secondary
};

CountMetrics count_metrics(const std::vector<SetPair>& pairs);

struct KlTResult {
  double kl_t = 0.0;
  std::size_t empty_generated = 0;  // pairs assigned the batch maximum
};

/// Mean topic divergence between inferred distributions per pair. Equal sets
/// contribute exactly zero without running inference; empty generated sets
/// are assigned the largest value observed in the batch and counted.
KlTResult kl_t_metric(const std::vector<SetPair>& pairs,
                      const lda::TopicModel& model, std::uint64_t seed);

struct PairRuleTable {
  std::vector<std::pair<std::size_t, std::size_t>> common;  // normalized a < b
  std::vector<std::pair<std::size_t, std::size_t>> taboo;
};

/// Text lines "COMMON <herbA> | <herbB>" and "TABOO <herbA> | <herbB>";
/// blank lines and lines starting with '#' are skipped. Names resolve through
/// the vocabulary alias map; the two pair sets must be disjoint.
PairRuleTable parse_rule_table(std::istream& is,
                               const lda::HerbVocabulary& vocab);
PairRuleTable load_rule_table(const std::string& path,
                              const lda::HerbVocabulary& vocab);

/// What counts as "avoiding" a taboo pair.
enum class AvoidanceRule {
  ExactlyOneEndpoint,  // default: one endpoint present, the other absent
  NotFullyContained,   // alternative: any pair not fully contained
};

struct LogicScore {
  long s_pos = 0;
  long s_neg = 0;
  long s_total = 0;
};

LogicScore logic_score(const HerbSet& prescription, const PairRuleTable& rules,
                       AvoidanceRule avoidance = AvoidanceRule::ExactlyOneEndpoint);

struct MetricsReport {
  std::size_t samples = 0;
  double p_sim = 0.0;   // fractions in [0,1]
  double r_sim = 0.0;
  double iou_sim = 0.0;
  CountMetrics counts;
  double kl_t = 0.0;
  std::size_t empty_generated = 0;
};

/// Per-sample evaluation over (generated, real) pairs; topic divergence is
/// included when a model is supplied.
MetricsReport build_report(const std::vector<SetPair>& pairs,
                           const lda::TopicModel* model, std::uint64_t seed);

struct FoldStat {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, n-1
};

FoldStat fold_stat(const std::vector<double>& values);

/// "46.77 ± 1.03"-style summary across at least two folds: similarity columns
/// as percentages to two decimals, then nb_p, nb_c, nb_d, kl_t.
std::string format_fold_table(const std::vector<MetricsReport>& folds);

/// One CSV line per report plus a header; same column order as the table.
std::string format_report_csv(const std::vector<MetricsReport>& folds);

}  // namespace tonguerx::metrics
