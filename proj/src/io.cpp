#include "quosr/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "quosr/common.hpp"

namespace quosr::io {

namespace {

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    return is;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::trunc) {
    std::ofstream os(path, mode);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    return os;
}

// header form: "# quosr-<kind> v1 key=value ..."
std::map<std::string, std::string> parse_header(const std::string& line, const std::string& kind) {
    const std::string prefix = "# quosr-" + kind + " v1";
    if (line.compare(0, prefix.size(), prefix) != 0)
        throw std::runtime_error("unknown header/version: expected '" + prefix + "', got '" +
                                 line + "'");
    std::map<std::string, std::string> kv;
    std::istringstream rest(line.substr(prefix.size()));
    std::string tok;
    while (rest >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("malformed header attribute '" + tok + "'");
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::runtime_error("malformed number '" + s + "'");
    return v;
}

}  // namespace

// ---------------------------------------------------------------- families

void write_expr_family(const std::string& path, std::span<const expr::Expr> family, int arity) {
    auto os = open_out(path);
    os << "# quosr-family v1 arity=" << arity << "\n";
    for (const auto& e : family) os << e.str() << "\n";
    if (!os) throw std::runtime_error("write failure on '" + path + "'");
}

std::vector<expr::Expr> read_expr_family(const std::string& path, int* arity_out) {
    auto is = open_in(path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty family file '" + path + "'");
    auto kv = parse_header(line, "family");
    const int arity = kv.count("arity") ? std::stoi(kv.at("arity")) : 1;
    if (arity_out) *arity_out = arity;

    std::vector<expr::Expr> out;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        try {
            out.push_back(expr::parse(line, arity));
        } catch (const expr::ParseError& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------- datasets

void write_datasets(const std::string& path, std::span<const DatasetRecord> records, int arity,
                    const std::string& method) {
    auto os = open_out(path);
    os << "# quosr-dataset v1 arity=" << arity << " method=" << method << "\n";
    os << "expr_id,step";
    for (int c = 0; c < arity; ++c) os << ",x" << c;
    os << ",y,substituted\n";
    for (const auto& rec : records) {
        for (std::size_t i = 0; i < rec.points.size(); ++i) {
            os << rec.expr_id << ',' << rec.step[i];
            for (double xv : rec.points[i].x) os << ',' << format_double(xv);
            os << ',' << format_double(rec.points[i].y) << ','
               << (rec.substituted[i] ? 1 : 0) << "\n";
        }
    }
    if (!os) throw std::runtime_error("write failure on '" + path + "'");
}

std::vector<DatasetRecord> read_datasets(const std::string& path, int* arity_out,
                                         std::string* method_out) {
    auto is = open_in(path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty dataset file '" + path + "'");
    auto kv = parse_header(line, "dataset");
    const int arity = kv.count("arity") ? std::stoi(kv.at("arity")) : 1;
    if (arity_out) *arity_out = arity;
    if (method_out) *method_out = kv.count("method") ? kv.at("method") : "";

    if (!std::getline(is, line)) throw std::runtime_error("dataset file missing column header");

    std::map<int, DatasetRecord> by_id;
    int lineno = 2;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto cells = split_csv(line);
        if (static_cast<int>(cells.size()) != arity + 4)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " +
                                     std::to_string(arity + 4) + " columns");
        const int id = std::stoi(cells[0]);
        auto& rec = by_id[id];
        rec.expr_id = id;
        rec.step.push_back(std::stoi(cells[1]));
        qnet::Point p;
        for (int c = 0; c < arity; ++c) p.x.push_back(parse_double(cells[static_cast<std::size_t>(2 + c)]));
        p.y = parse_double(cells[static_cast<std::size_t>(2 + arity)]);
        rec.points.push_back(std::move(p));
        rec.substituted.push_back(cells[static_cast<std::size_t>(3 + arity)] == "1");
    }
    std::vector<DatasetRecord> out;
    out.reserve(by_id.size());
    for (auto& [id, rec] : by_id) out.push_back(std::move(rec));
    return out;
}

// ------------------------------------------------------------------- trace

void write_trace_header(const std::string& path, int steps) {
    auto os = open_out(path);
    os << "# quosr-losstrace v1 steps=" << steps << "\n";
    os << "iteration,loss";
    for (int k = 1; k <= steps; ++k) os << ",pos_kl_" << k << ",neg_kl_" << k;
    os << "\n";
}

void append_trace_row(const std::string& path, const train::TraceRow& row) {
    auto os = open_out(path, std::ios::app);
    os << row.iteration << ',' << format_double(row.loss);
    for (const auto& s : row.per_step)
        os << ',' << format_double(s.pos_mean) << ',' << format_double(s.neg_mean);
    os << "\n";
    if (!os) throw std::runtime_error("write failure on '" + path + "'");
}

void truncate_trace(const std::string& path, int iteration) {
    auto is = open_in(path);
    std::vector<std::string> keep;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (lineno <= 2 || line.empty() || line[0] == '#') {
            keep.push_back(line);
            continue;
        }
        const int iter = std::stoi(line.substr(0, line.find(',')));
        if (iter <= iteration) keep.push_back(line);
    }
    is.close();
    auto os = open_out(path);
    for (const auto& l : keep) os << l << "\n";
}

// ------------------------------------------------------------------ report

void write_eval_report(const std::string& path, const reg::EvalReport& report,
                       const std::string& method) {
    auto os = open_out(path);
    os << "# quosr-evalreport v1 method=" << method << "\n";
    os << "expr_id,expression,fitted,mse_n,r2,isclose,skeleton_match,excluded_points\n";
    for (const auto& r : report.rows) {
        os << r.expr_id << ',' << r.text << ',' << r.fitted_text << ','
           << format_double(r.mse) << ',' << format_double(r.r2) << ','
           << format_double(r.isclose) << ',' << (r.skeleton_match ? 1 : 0) << ','
           << r.excluded_points << "\n";
    }
    if (!os) throw std::runtime_error("write failure on '" + path + "'");
}

// --------------------------------------------------------------------- svg

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kMarginLeft = 60;
constexpr int kMarginBottom = 50;
constexpr int kMarginTop = 40;
constexpr int kMarginRight = 20;

const char* kPalette[] = {"#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"};

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fmt_coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

void svg_open(std::ostream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"15\">" << svg_escape(title) << "</text>\n";
}

void svg_axes(std::ostream& os, double ymax) {
    const int x0 = kMarginLeft, y0 = kHeight - kMarginBottom, y1 = kMarginTop;
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << kWidth - kMarginRight
       << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
       << "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = ymax * tick / 4.0;
        const double y = y0 - (y0 - y1) * tick / 4.0;
        os << "<text x=\"" << x0 - 8 << "\" y=\"" << fmt_coord(y + 4)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
           << fmt_coord(v) << "</text>\n";
        os << "<line x1=\"" << x0 - 4 << "\" y1=\"" << fmt_coord(y) << "\" x2=\"" << x0
           << "\" y2=\"" << fmt_coord(y) << "\" stroke=\"black\"/>\n";
    }
}

double series_max(const std::map<std::string, std::vector<double>>& series) {
    double mx = 0.0;
    for (const auto& [name, vals] : series)
        for (double v : vals)
            if (std::isfinite(v)) mx = std::max(mx, v);
    return mx <= 0.0 ? 1.0 : mx;
}

void svg_legend(std::ostream& os, const std::map<std::string, std::vector<double>>& series) {
    int i = 0;
    for (const auto& [name, vals] : series) {
        const int lx = kMarginLeft + 10 + 140 * i;
        os << "<rect x=\"" << lx << "\" y=\"" << kMarginTop - 12 << "\" width=\"10\" height=\"10\" fill=\""
           << kPalette[i % 6] << "\"/>\n";
        os << "<text x=\"" << lx + 14 << "\" y=\"" << kMarginTop - 3
           << "\" font-family=\"sans-serif\" font-size=\"11\">" << svg_escape(name) << "</text>\n";
        ++i;
    }
}

}  // namespace

void write_bar_chart_svg(const std::string& path, const std::string& title,
                         std::span<const std::string> labels,
                         const std::map<std::string, std::vector<double>>& series) {
    for (const auto& [name, vals] : series)
        if (vals.size() != labels.size())
            throw std::invalid_argument("bar chart: series '" + name + "' length mismatch");
    auto os = open_out(path);
    svg_open(os, title);
    const double ymax = series_max(series) * 1.05;
    svg_axes(os, ymax);
    svg_legend(os, series);

    const int y0 = kHeight - kMarginBottom, y1 = kMarginTop;
    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double group_w = plot_w / static_cast<double>(labels.size());
    const double bar_w = group_w * 0.8 / static_cast<double>(series.size());

    for (std::size_t g = 0; g < labels.size(); ++g) {
        int si = 0;
        for (const auto& [name, vals] : series) {
            const double v = std::isfinite(vals[g]) ? std::max(0.0, vals[g]) : 0.0;
            const double h = (y0 - y1) * v / ymax;
            const double x = kMarginLeft + group_w * static_cast<double>(g) + group_w * 0.1 + bar_w * si;
            os << "<rect x=\"" << fmt_coord(x) << "\" y=\"" << fmt_coord(y0 - h) << "\" width=\""
               << fmt_coord(bar_w) << "\" height=\"" << fmt_coord(h) << "\" fill=\""
               << kPalette[si % 6] << "\"/>\n";
            ++si;
        }
        os << "<text x=\"" << fmt_coord(kMarginLeft + group_w * (static_cast<double>(g) + 0.5))
           << "\" y=\"" << y0 + 18 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           << "font-size=\"12\">" << svg_escape(labels[g]) << "</text>\n";
    }
    os << "</svg>\n";
}

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label,
                          const std::map<std::string, std::vector<double>>& series) {
    auto os = open_out(path);
    svg_open(os, title);
    const double ymax = series_max(series) * 1.05;
    svg_axes(os, ymax);
    svg_legend(os, series);

    const int y0 = kHeight - kMarginBottom, y1 = kMarginTop;
    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    std::size_t n = 0;
    for (const auto& [name, vals] : series) n = std::max(n, vals.size());

    int si = 0;
    for (const auto& [name, vals] : series) {
        os << "<polyline fill=\"none\" stroke=\"" << kPalette[si % 6] << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double x = kMarginLeft + (n > 1 ? plot_w * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0);
            const double v = std::isfinite(vals[i]) ? std::max(0.0, vals[i]) : 0.0;
            const double y = y0 - (y0 - y1) * v / ymax;
            os << fmt_coord(x) << ',' << fmt_coord(y) << ' ';
        }
        os << "\"/>\n";
        ++si;
    }
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
       << svg_escape(x_label) << "</text>\n";
    os << "</svg>\n";
}

std::string read_text_file(const std::string& path) {
    auto is = open_in(path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    auto os = open_out(path);
    os << content;
    if (!os) throw std::runtime_error("write failure on '" + path + "'");
}

}  // namespace quosr::io
