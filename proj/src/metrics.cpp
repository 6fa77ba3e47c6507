#include "ddcm/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "ddcm/errors.hpp"

namespace ddcm {

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& label,
                                 std::optional<std::int32_t> ignore_id) {
  if (!(pred.n == label.n && pred.h == label.h && pred.w == label.w))
    throw ShapeError("confusion: prediction/label shape mismatch");
  const Index C = classes();
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const std::int32_t t = label.v[i];
    if (ignore_id && t == *ignore_id) {
      ++ignored_;
      continue;
    }
    const std::int32_t p = pred.v[i];
    if (t < 0 || t >= C || p < 0 || p >= C)
      throw ShapeError("confusion: class id out of range (true=" + std::to_string(t) +
                       ", pred=" + std::to_string(p) + ", classes=" + std::to_string(C) + ")");
    ++counts_(t, p);
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  if (o.classes() != classes()) throw ShapeError("confusion: merging different class counts");
  counts_ += o.counts_;
  ignored_ += o.ignored_;
  return *this;
}

Scores compute_scores(const ConfusionMatrix& cm, const std::vector<Index>& excluded_classes) {
  const Index C = cm.classes();
  if (C < 1 || cm.total() == 0) throw NumericError("compute_scores: empty confusion matrix");

  Scores s;
  s.per_class.resize(static_cast<size_t>(C));
  s.excluded = excluded_classes;

  std::vector<std::uint64_t> row_sum(static_cast<size_t>(C), 0), col_sum(static_cast<size_t>(C), 0);
  std::uint64_t diag = 0;
  for (Index i = 0; i < C; ++i)
    for (Index j = 0; j < C; ++j) {
      row_sum[static_cast<size_t>(i)] += cm.at(i, j);
      col_sum[static_cast<size_t>(j)] += cm.at(i, j);
      if (i == j) diag += cm.at(i, j);
    }
  s.overall_accuracy = static_cast<double>(diag) / static_cast<double>(cm.total());

  double f1_sum = 0, iou_sum = 0;
  Index counted = 0;
  for (Index c = 0; c < C; ++c) {
    ClassScore& cs = s.per_class[static_cast<size_t>(c)];
    cs.support = row_sum[static_cast<size_t>(c)];
    if (cs.support == 0) {
      s.undefined.push_back(c);
      continue;
    }
    const double tp = static_cast<double>(cm.at(c, c));
    const double fp = static_cast<double>(col_sum[static_cast<size_t>(c)]) - tp;
    const double fn = static_cast<double>(cs.support) - tp;
    cs.defined = true;
    cs.precision = (tp + fp) > 0 ? tp / (tp + fp) : 0.0;
    cs.recall = tp / (tp + fn);
    cs.f1 = 2.0 * tp / (2.0 * tp + fp + fn);
    cs.iou = tp / (tp + fp + fn);
    if (std::find(excluded_classes.begin(), excluded_classes.end(), c) != excluded_classes.end())
      continue;
    f1_sum += cs.f1;
    iou_sum += cs.iou;
    ++counted;
  }
  if (counted > 0) {
    s.mean_f1 = f1_sum / static_cast<double>(counted);
    s.mean_iou = iou_sum / static_cast<double>(counted);
  }
  return s;
}

Eigen::MatrixXd normalize_rows(const ConfusionMatrix& cm, std::vector<bool>* zero_rows) {
  const Index C = cm.classes();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(C, C);
  if (zero_rows) zero_rows->assign(static_cast<size_t>(C), false);
  for (Index i = 0; i < C; ++i) {
    std::uint64_t row = 0;
    for (Index j = 0; j < C; ++j) row += cm.at(i, j);
    if (row == 0) {
      if (zero_rows) (*zero_rows)[static_cast<size_t>(i)] = true;
      continue;
    }
    for (Index j = 0; j < C; ++j)
      out(i, j) = static_cast<double>(cm.at(i, j)) / static_cast<double>(row);
  }
  return out;
}

std::string scores_report(const Scores& s) {
  std::ostringstream os;
  char buf[160];
  os << "class    support    precision  recall     F1         IoU\n";
  for (size_t c = 0; c < s.per_class.size(); ++c) {
    const auto& cs = s.per_class[c];
    if (cs.defined) {
      std::snprintf(buf, sizeof(buf), "%-8zu %-10llu %-10.4f %-10.4f %-10.4f %-10.4f\n", c,
                    static_cast<unsigned long long>(cs.support), cs.precision, cs.recall, cs.f1, cs.iou);
    } else {
      std::snprintf(buf, sizeof(buf), "%-8zu %-10llu (no support: excluded from means)\n", c,
                    static_cast<unsigned long long>(cs.support));
    }
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "OA   %.4f\nmF1  %.4f\nmIoU %.4f\n", s.overall_accuracy, s.mean_f1,
                s.mean_iou);
  os << buf;
  if (!s.excluded.empty()) {
    os << "excluded from means:";
    for (Index c : s.excluded) os << " " << c;
    os << "\n";
  }
  return os.str();
}

std::string scores_csv(const Scores& s) {
  std::ostringstream os;
  os << "class,support,precision,recall,f1,iou\n";
  for (size_t c = 0; c < s.per_class.size(); ++c) {
    const auto& cs = s.per_class[c];
    os << c << "," << cs.support << ",";
    if (cs.defined)
      os << cs.precision << "," << cs.recall << "," << cs.f1 << "," << cs.iou << "\n";
    else
      os << ",,,\n";
  }
  os << "OA," << s.overall_accuracy << ",,,,\n";
  os << "mF1," << s.mean_f1 << ",,,,\n";
  os << "mIoU," << s.mean_iou << ",,,,\n";
  return os.str();
}

}  // namespace ddcm
