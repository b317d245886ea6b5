#pragma once

#include <optional>
#include <string>
#include <vector>

namespace cg3d {

// One row per global step. Columns that the step did not compute stay empty.
// Stage-0 image-text steps fill the loss_p/lr_p columns.
struct LogRow {
  long step = 0;
  std::optional<double> loss_3d, loss_p, lr_3d, lr_p;

  friend bool operator==(const LogRow&, const LogRow&) = default;
};

struct TrainingLog {
  std::vector<LogRow> rows;

  // "step,loss_3d,loss_p,lr_3d,lr_p" then one line per row; values use %.9g
  // so float losses round-trip.
  std::string csv() const;
  void write(const std::string& path) const;
  static TrainingLog parse(const std::string& text);

  // Mean of the first / last `window` finite values of a column.
  std::optional<double> head_mean(std::optional<double> LogRow::*col, std::size_t window) const;
  std::optional<double> tail_mean(std::optional<double> LogRow::*col, std::size_t window) const;

  friend bool operator==(const TrainingLog&, const TrainingLog&) = default;
};

}  // namespace cg3d
