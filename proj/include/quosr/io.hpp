#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "quosr/expr.hpp"
#include "quosr/querynet.hpp"
#include "quosr/regressor.hpp"
#include "quosr/training.hpp"

namespace quosr::io {

// Every text format starts with a "# quosr-<kind> v1 ..." header line;
// readers reject unknown kinds and versions.

void write_expr_family(const std::string& path, std::span<const expr::Expr> family, int arity);
std::vector<expr::Expr> read_expr_family(const std::string& path, int* arity_out = nullptr);

struct DatasetRecord {
    int expr_id = 0;
    qnet::Dataset points;
    std::vector<int> step;
    std::vector<bool> substituted;
};

void write_datasets(const std::string& path, std::span<const DatasetRecord> records, int arity,
                    const std::string& method);
std::vector<DatasetRecord> read_datasets(const std::string& path, int* arity_out = nullptr,
                                         std::string* method_out = nullptr);

/// Loss trace CSV: iteration, loss, then per-step positive/negative KL means.
void write_trace_header(const std::string& path, int steps);
void append_trace_row(const std::string& path, const train::TraceRow& row);
/// Drops rows past `iteration`; the resume path uses this so an interrupted
/// and resumed run produces byte-identical traces.
void truncate_trace(const std::string& path, int iteration);

void write_eval_report(const std::string& path, const reg::EvalReport& report,
                       const std::string& method);

struct SeriesPoint {
    std::string label;
    double value = 0.0;
};

/// Deterministic, timestamp-free SVG bar chart; one group per label, one bar
/// per series.
void write_bar_chart_svg(const std::string& path, const std::string& title,
                         std::span<const std::string> labels,
                         const std::map<std::string, std::vector<double>>& series);

/// Deterministic SVG line chart; one polyline per series over x = 0..n-1.
void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label,
                          const std::map<std::string, std::vector<double>>& series);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace quosr::io
