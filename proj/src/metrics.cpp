#include "tonguerx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tonguerx::metrics {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_set(const HerbSet& s, const char* what) {
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i - 1] >= s[i])
      throw std::invalid_argument(std::string(what) +
                                  ": herb ids must be sorted and unique");
}

std::size_t intersection_size(const HerbSet& a, const HerbSet& b) {
  std::size_t count = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++count;
      ++i;
      ++j;
    }
  }
  return count;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

SampleSimilarity similarity(const HerbSet& generated, const HerbSet& real) {
  require_set(generated, "similarity");
  require_set(real, "similarity");
  require(!real.empty(), "similarity: real prescription is empty");
  SampleSimilarity s;
  s.np = generated.size();
  s.ng = real.size();
  s.nc = intersection_size(generated, real);
  s.p = s.np == 0 ? 0.0
                  : static_cast<double>(s.nc) / static_cast<double>(s.np);
  s.r = static_cast<double>(s.nc) / static_cast<double>(s.ng);
  s.iou = static_cast<double>(s.nc) /
          static_cast<double>(s.np + s.ng - s.nc);
  return s;
}

CountMetrics count_metrics(const std::vector<SetPair>& pairs) {
  require(!pairs.empty(), "count metrics: no pairs");
  double sum_np = 0.0, sum_ng = 0.0, sum_nc = 0.0, sum_abs = 0.0;
  for (const auto& [generated, real] : pairs) {
    require_set(generated, "count metrics");
    require_set(real, "count metrics");
    const double np = static_cast<double>(generated.size());
    const double ng = static_cast<double>(real.size());
    sum_np += np;
    sum_ng += ng;
    sum_nc += static_cast<double>(intersection_size(generated, real));
    sum_abs += std::fabs(np - ng);
  }
  const double n = static_cast<double>(pairs.size());
  CountMetrics c;
  c.nb_p = sum_np / n;
  c.nb_c = sum_nc / n;
  c.nb_d = std::fabs(sum_np / n - sum_ng / n);
  c.nb_d_mean_abs = sum_abs / n;
  return c;
}

KlTResult kl_t_metric(const std::vector<SetPair>& pairs,
                      const lda::TopicModel& model, std::uint64_t seed) {
  require(!pairs.empty(), "kl_t: no pairs");
  std::vector<double> values(pairs.size(), 0.0);
  std::vector<bool> flagged(pairs.size(), false);
  double batch_max = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [generated, real] = pairs[i];
    require(!real.empty(), "kl_t: real prescription is empty");
    if (generated == real) continue;  // exact zero by convention
    if (generated.empty()) {
      flagged[i] = true;
      continue;
    }
    lda::TopicDistribution pg =
        lda::infer_topics(model, generated, mix_seed(seed, 2 * i));
    lda::TopicDistribution pr =
        lda::infer_topics(model, real, mix_seed(seed, 2 * i + 1));
    values[i] = lda::kl_topics(pg, pr);
    batch_max = std::max(batch_max, values[i]);
  }
  KlTResult result;
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (flagged[i]) {
      values[i] = batch_max;
      ++result.empty_generated;
    }
    total += values[i];
  }
  result.kl_t = total / static_cast<double>(pairs.size());
  return result;
}

PairRuleTable parse_rule_table(std::istream& is,
                               const lda::HerbVocabulary& vocab) {
  PairRuleTable table;
  std::set<std::pair<std::size_t, std::size_t>> common, taboo;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    std::istringstream ls(text);
    std::string keyword;
    ls >> keyword;
    std::string rest;
    std::getline(ls, rest);
    const std::size_t bar = rest.find('|');
    require(bar != std::string::npos,
            "rule table line " + std::to_string(line_no) +
                ": expected '<herbA> | <herbB>'");
    const std::string name_a = trim(rest.substr(0, bar));
    const std::string name_b = trim(rest.substr(bar + 1));
    require(!name_a.empty() && !name_b.empty(),
            "rule table line " + std::to_string(line_no) + ": missing herb name");
    std::size_t a = vocab.id_of(name_a);
    std::size_t b = vocab.id_of(name_b);
    require(a != b, "rule table line " + std::to_string(line_no) +
                        ": a pair needs two distinct herbs");
    if (b < a) std::swap(a, b);
    if (keyword == "COMMON") {
      common.emplace(a, b);
    } else if (keyword == "TABOO") {
      taboo.emplace(a, b);
    } else {
      require(false, "rule table line " + std::to_string(line_no) +
                         ": unknown keyword '" + keyword + "'");
    }
  }
  for (const auto& pair : common)
    require(!taboo.count(pair),
            "rule table: a pair appears as both COMMON and TABOO");
  table.common.assign(common.begin(), common.end());
  table.taboo.assign(taboo.begin(), taboo.end());
  return table;
}

PairRuleTable load_rule_table(const std::string& path,
                              const lda::HerbVocabulary& vocab) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("rule table: cannot read " + path);
  return parse_rule_table(is, vocab);
}

LogicScore logic_score(const HerbSet& prescription, const PairRuleTable& rules,
                       AvoidanceRule avoidance) {
  require_set(prescription, "logic score");
  auto present = [&](std::size_t id) {
    return std::binary_search(prescription.begin(), prescription.end(), id);
  };
  LogicScore score;
  for (const auto& [a, b] : rules.common)
    if (present(a) && present(b)) ++score.s_pos;
  long contained = 0, avoided = 0;
  for (const auto& [a, b] : rules.taboo) {
    const bool has_a = present(a), has_b = present(b);
    if (has_a && has_b) {
      ++contained;
    } else if (avoidance == AvoidanceRule::ExactlyOneEndpoint) {
      if (has_a != has_b) ++avoided;
    } else {
      ++avoided;
    }
  }
  score.s_neg = avoided - contained;
  score.s_total = score.s_pos + score.s_neg;
  return score;
}

MetricsReport build_report(const std::vector<SetPair>& pairs,
                           const lda::TopicModel* model, std::uint64_t seed) {
  require(!pairs.empty(), "report: no pairs");
  MetricsReport report;
  report.samples = pairs.size();
  double sp = 0.0, sr = 0.0, si = 0.0;
  for (const auto& [generated, real] : pairs) {
    SampleSimilarity s = similarity(generated, real);
    sp += s.p;
    sr += s.r;
    si += s.iou;
  }
  const double n = static_cast<double>(pairs.size());
  report.p_sim = sp / n;
  report.r_sim = sr / n;
  report.iou_sim = si / n;
  report.counts = count_metrics(pairs);
  if (model != nullptr) {
    KlTResult kl = kl_t_metric(pairs, *model, seed);
    report.kl_t = kl.kl_t;
    report.empty_generated = kl.empty_generated;
  }
  return report;
}

FoldStat fold_stat(const std::vector<double>& values) {
  require(values.size() >= 2, "fold stats need at least two folds");
  FoldStat stat;
  for (double v : values) stat.mean += v;
  stat.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - stat.mean) * (v - stat.mean);
  stat.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return stat;
}

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

FoldStat stat_of(const std::vector<MetricsReport>& folds,
                 double (*pick)(const MetricsReport&)) {
  std::vector<double> values;
  values.reserve(folds.size());
  for (const auto& f : folds) values.push_back(pick(f));
  return fold_stat(values);
}

struct Column {
  const char* name;
  double (*pick)(const MetricsReport&);
  bool percent;
};

constexpr Column kColumns[] = {
    {"p_sim", [](const MetricsReport& r) { return r.p_sim; }, true},
    {"r_sim", [](const MetricsReport& r) { return r.r_sim; }, true},
    {"iou_sim", [](const MetricsReport& r) { return r.iou_sim; }, true},
    {"nb_p", [](const MetricsReport& r) { return r.counts.nb_p; }, false},
    {"nb_c", [](const MetricsReport& r) { return r.counts.nb_c; }, false},
    {"nb_d", [](const MetricsReport& r) { return r.counts.nb_d; }, false},
    {"kl_t", [](const MetricsReport& r) { return r.kl_t; }, false},
};

}  // namespace

std::string format_fold_table(const std::vector<MetricsReport>& folds) {
  require(folds.size() >= 2, "fold table needs at least two folds");
  std::ostringstream out;
  out << "metric        mean ± std  (" << folds.size() << " folds)\n";
  for (const Column& col : kColumns) {
    FoldStat stat = stat_of(folds, col.pick);
    const double scale = col.percent ? 100.0 : 1.0;
    out << col.name;
    for (std::size_t pad = std::string(col.name).size(); pad < 10; ++pad)
      out << ' ';
    out << fixed2(stat.mean * scale) << " ± " << fixed2(stat.stddev * scale);
    if (col.percent) out << " %";
    out << '\n';
  }
  return out.str();
}

std::string format_report_csv(const std::vector<MetricsReport>& folds) {
  std::ostringstream out;
  out << "fold,samples,p_sim,r_sim,iou_sim,nb_p,nb_c,nb_d,nb_d_mean_abs,kl_t,"
         "empty_generated\n";
  for (std::size_t i = 0; i < folds.size(); ++i) {
    const MetricsReport& r = folds[i];
    out << i << ',' << r.samples << ',' << r.p_sim << ',' << r.r_sim << ','
        << r.iou_sim << ',' << r.counts.nb_p << ',' << r.counts.nb_c << ','
        << r.counts.nb_d << ',' << r.counts.nb_d_mean_abs << ',' << r.kl_t
        << ',' << r.empty_generated << '\n';
  }
  return out.str();
}

}  // namespace tonguerx::metrics
