#include "cg3d/training/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "cg3d/util/binary_io.hpp"
#include "cg3d/util/error.hpp"

namespace cg3d {

namespace {

void put(std::string& out, const std::optional<double>& v) {
  out += ',';
  if (!v) return;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  out += buf;
}

std::optional<double> cell(const std::string& s, std::size_t line) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw FormatError("training log line " + std::to_string(line) + ": bad number", 0);
  return v;
}

template <typename Pick>
std::optional<double> window_mean(const std::vector<LogRow>& rows, std::size_t window, bool from_end, Pick pick) {
  double sum = 0;
  std::size_t n = 0;
  const std::size_t total = rows.size();
  for (std::size_t k = 0; k < total && n < window; ++k) {
    const auto& v = pick(rows[from_end ? total - 1 - k : k]);
    if (!v) continue;
    sum += *v;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace

std::string TrainingLog::csv() const {
  std::string out = "step,loss_3d,loss_p,lr_3d,lr_p\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step);
    put(out, r.loss_3d);
    put(out, r.loss_p);
    put(out, r.lr_3d);
    put(out, r.lr_p);
    out += '\n';
  }
  return out;
}

void TrainingLog::write(const std::string& path) const { io::write_text_file(path, csv()); }

TrainingLog TrainingLog::parse(const std::string& text) {
  TrainingLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        f.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    f.push_back(cur);
    if (f.size() != 5) throw FormatError("training log line " + std::to_string(n) + ": expected 5 fields", 0);
    LogRow r;
    r.step = static_cast<long>(cell(f[0], n).value_or(0));
    r.loss_3d = cell(f[1], n);
    r.loss_p = cell(f[2], n);
    r.lr_3d = cell(f[3], n);
    r.lr_p = cell(f[4], n);
    log.rows.push_back(r);
  }
  return log;
}

std::optional<double> TrainingLog::head_mean(std::optional<double> LogRow::*col, std::size_t window) const {
  return window_mean(rows, window, false, [&](const LogRow& r) -> const std::optional<double>& { return r.*col; });
}

std::optional<double> TrainingLog::tail_mean(std::optional<double> LogRow::*col, std::size_t window) const {
  return window_mean(rows, window, true, [&](const LogRow& r) -> const std::optional<double>& { return r.*col; });
}

}  // namespace cg3d
