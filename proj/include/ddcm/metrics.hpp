#ifndef DDCM_METRICS_HPP
#define DDCM_METRICS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ddcm/tensor.hpp"

namespace ddcm {

/// C x C pixel counts; entry (i, j) = pixels of true class i predicted as j.
class ConfusionMatrix {
 public:
  using Counts = Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic>;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(Index classes) : counts_(Counts::Zero(classes, classes)) {}

  Index classes() const { return counts_.rows(); }
  const Counts& counts() const { return counts_; }
  std::uint64_t ignored() const { return ignored_; }
  std::uint64_t total() const { return counts_.sum(); }

  std::uint64_t at(Index true_cls, Index pred_cls) const { return counts_(true_cls, pred_cls); }
  std::uint64_t& at(Index true_cls, Index pred_cls) { return counts_(true_cls, pred_cls); }

  void accumulate(const LabelMap& pred, const LabelMap& label,
                  std::optional<std::int32_t> ignore_id = std::nullopt);

  /// Shard merge: accumulation is associative over map pieces.
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);

 private:
  Counts counts_;
  std::uint64_t ignored_ = 0;
};

struct ClassScore {
  std::uint64_t support = 0;  // row sum: true pixels of the class
  double precision = 0, recall = 0, f1 = 0, iou = 0;
  bool defined = false;  // false when support == 0
};

struct Scores {
  std::vector<ClassScore> per_class;
  double overall_accuracy = 0;
  double mean_f1 = 0;
  double mean_iou = 0;
  std::vector<Index> excluded;   // classes excluded from the means by request
  std::vector<Index> undefined;  // zero-support classes dropped with a warning
};

/// Per-class precision/recall/F1/IoU plus OA and macro means over classes not
/// excluded and with nonzero support.
Scores compute_scores(const ConfusionMatrix& cm, const std::vector<Index>& excluded_classes = {});

/// Row-stochastic matrix; zero-support rows become zero rows and are flagged.
Eigen::MatrixXd normalize_rows(const ConfusionMatrix& cm, std::vector<bool>* zero_rows = nullptr);

std::string scores_report(const Scores& s);
std::string scores_csv(const Scores& s);

}  // namespace ddcm

#endif  // DDCM_METRICS_HPP
