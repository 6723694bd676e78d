#include "ffpdet/metrics.hpp"

#include <algorithm>
#include <unordered_map>

namespace ffpdet {

bool classify_image(const std::vector<Detection>& dets,
                    double score_threshold) {
  return std::any_of(dets.begin(), dets.end(), [&](const Detection& d) {
    return d.score >= score_threshold;
  });
}

MetricReport compute_metrics(const std::vector<std::pair<bool, bool>>& flags) {
  MetricReport r;
  for (auto [predicted, actual] : flags) {
    (actual ? r.m : r.n) += 1;
    if (predicted) {
      r.a += 1;
      if (!actual) r.b += 1;
    } else {
      r.c += 1;
      if (actual) r.d += 1;
    }
  }
  const double denom = double(r.m + r.n);
  if (denom > 0) {
    r.fdr = double(r.b) / denom;
    r.mdr = double(r.d) / denom;
  }
  r.cdr = 1.0 - r.fdr - r.mdr;
  return r;
}

MetricReport compute_metrics(const std::vector<ImagePrediction>& preds,
                             const std::vector<ImageTruth>& truth,
                             double score_threshold) {
  std::unordered_map<std::string, const ImagePrediction*> by_id;
  for (const auto& p : preds) by_id.emplace(p.id, &p);

  std::string missing;
  for (const auto& t : truth)
    if (!by_id.count(t.id)) missing += " " + t.id;
  if ((int64_t)preds.size() != (int64_t)truth.size() || !missing.empty()) {
    std::unordered_map<std::string, bool> truth_ids;
    for (const auto& t : truth) truth_ids.emplace(t.id, true);
    for (const auto& p : preds)
      if (!truth_ids.count(p.id)) missing += " " + p.id;
    require<DataError>(missing.empty() &&
                           preds.size() == truth.size(),
                       "prediction/ground-truth id mismatch:" +
                           (missing.empty() ? std::string(" duplicate ids")
                                            : missing));
  }

  std::vector<std::pair<bool, bool>> flags;
  flags.reserve(truth.size());
  std::map<int, int64_t> counts;
  for (const auto& t : truth) {
    const ImagePrediction& p = *by_id.at(t.id);
    flags.emplace_back(classify_image(p.detections, score_threshold), t.fault);
    for (const auto& d : p.detections)
      if (d.score >= score_threshold) counts[d.cls] += 1;
  }
  MetricReport r = compute_metrics(flags);
  r.class_detections = std::move(counts);
  return r;
}

}  // namespace ffpdet
