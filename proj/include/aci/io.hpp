#pragma once

// File formats: price series and county tables in, trajectories (CSV) and
// summaries (JSON) out.
//
// Trajectory CSV:
//   # aci-trajectory alpha=0.1 gamma=0.005 initial_level=0.1 update=simple decay=0.95 window=500 status=complete
//   t,label,alpha_t,err,lower,upper,local_cov
//   1,2004-01-02,0.1,0,0.0001,0.0003,
// The leading comment line carries the configuration so a file can be
// summarised on its own; files without it are accepted. Numbers use 12
// significant digits, infinities are written `inf` / `-inf`, and the empty set
// is written as lower=inf, upper=-inf. `local_cov` is blank where the centred
// window does not fit.

#include "aci/core.hpp"
#include "aci/election.hpp"
#include "aci/error.hpp"
#include "aci/hmm.hpp"
#include "aci/metrics.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace aci {

namespace csv {

/// Splits one CSV record. Fields may be double-quoted; "" inside quotes is a quote.
inline std::vector<std::string> split(std::string_view line, std::size_t line_no) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += ch;
            }
        } else if (ch == '"' && field.empty() && !was_quoted) {
            quoted = was_quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(field));
            field.clear();
            was_quoted = false;
        } else {
            field += ch;
        }
    }
    if (quoted) throw ParseError("unterminated quoted field", line_no);
    out.push_back(std::move(field));
    return out;
}

inline std::string quote(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + '"';
}

inline std::string format_number(double v) {
    if (v == inf) return "inf";
    if (v == -inf) return "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline std::string format_exact(double v) {
    if (v == inf) return "inf";
    if (v == -inf) return "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_number(std::string_view s, std::size_t line_no, std::string_view what) {
    if (s == "inf" || s == "+inf") return inf;
    if (s == "-inf") return -inf;
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end || s.empty() || !std::isfinite(v))
        throw ParseError("invalid " + std::string(what) + " '" + std::string(s) + "'", line_no);
    return v;
}

/// Reads the next line, dropping a trailing carriage return.
inline bool next_line(std::istream& in, std::string& line, std::size_t& line_no) {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

}  // namespace csv

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'", 0);
    return in;
}

// ---------------------------------------------------------------------------
// Prices
// ---------------------------------------------------------------------------

struct PriceSeries {
    std::vector<std::string> dates;
    std::vector<double> open;

    std::size_t size() const noexcept { return open.size(); }
};

namespace detail {

inline bool valid_iso_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9})
        if (s[i] < '0' || s[i] > '9') return false;
    const int y = std::stoi(std::string(s.substr(0, 4)));
    const int m = std::stoi(std::string(s.substr(5, 2)));
    const int d = std::stoi(std::string(s.substr(8, 2)));
    if (m < 1 || m > 12 || d < 1) return false;
    static constexpr int days[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    return d <= days[m - 1] + (m == 2 && leap ? 1 : 0);
}

}  // namespace detail

inline PriceSeries read_prices(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    if (!csv::next_line(in, line, line_no)) throw ParseError("empty price file", 1);
    if (line != "date,open") throw ParseError("price header must be 'date,open', got '" + line + "'", line_no);
    PriceSeries out;
    while (csv::next_line(in, line, line_no)) {
        if (line.empty()) continue;
        const auto f = csv::split(line, line_no);
        if (f.size() != 2) throw ParseError("expected 2 fields, got " + std::to_string(f.size()), line_no);
        if (!detail::valid_iso_date(f[0])) throw ParseError("invalid date '" + f[0] + "'", line_no);
        const double price = csv::parse_number(f[1], line_no, "price");
        if (!(price > 0.0)) throw ValidationError("price must be positive", line_no);
        if (!out.dates.empty() && !(out.dates.back() < f[0]))
            throw ValidationError("dates must be strictly increasing ('" + f[0] + "' follows '" + out.dates.back() + "')",
                                  line_no);
        out.dates.push_back(f[0]);
        out.open.push_back(price);
    }
    return out;
}

inline PriceSeries read_prices(const std::string& path) {
    auto in = open_input(path);
    return read_prices(in);
}

inline void write_prices(std::ostream& out, const PriceSeries& p) {
    out << "date,open\n";
    for (std::size_t i = 0; i < p.size(); ++i) out << p.dates[i] << ',' << csv::format_number(p.open[i]) << '\n';
}

/// Consecutive business days (Monday to Friday) starting at 2000-01-03.
inline std::vector<std::string> business_day_labels(std::size_t n) {
    std::vector<std::string> out;
    out.reserve(n);
    int y = 2000, m = 1, d = 3, weekday = 0;  // 2000-01-03 was a Monday
    static constexpr int days[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    while (out.size() < n) {
        if (weekday < 5) {
            out.push_back(fmt::format("{:04}-{:02}-{:02}", y, m, d));
        }
        weekday = (weekday + 1) % 7;
        const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
        if (++d > days[m - 1] + (m == 2 && leap ? 1 : 0)) {
            d = 1;
            if (++m > 12) {
                m = 1;
                ++y;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Counties
// ---------------------------------------------------------------------------

inline std::vector<CountyRecord> read_counties(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    if (!csv::next_line(in, line, line_no)) throw ParseError("empty county file", 1);
    const auto header = csv::split(line, line_no);
    const auto bad_header = [&] {
        return ParseError("county header must be 'id,population,x1,...,xd,y_prev,y', got '" + line + "'", line_no);
    };
    if (header.size() < 4 || header[0] != "id" || header[1] != "population" ||
        header[header.size() - 2] != "y_prev" || header.back() != "y")
        throw bad_header();
    const std::size_t d = header.size() - 4;
    for (std::size_t j = 0; j < d; ++j)
        if (header[2 + j] != "x" + std::to_string(j + 1)) throw bad_header();

    std::vector<CountyRecord> out;
    while (csv::next_line(in, line, line_no)) {
        if (line.empty()) continue;
        const auto f = csv::split(line, line_no);
        if (f.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()),
                             line_no);
        CountyRecord c;
        c.id = f[0];
        c.population = csv::parse_number(f[1], line_no, "population");
        for (std::size_t j = 0; j < d; ++j) c.covariates.push_back(csv::parse_number(f[2 + j], line_no, "covariate"));
        c.y_prev = csv::parse_number(f[2 + d], line_no, "y_prev");
        c.y = csv::parse_number(f[3 + d], line_no, "y");
        if (!(c.population > 0.0)) throw ValidationError("population must be positive", line_no);
        if (!(c.y_prev > 0.0)) throw ValidationError("y_prev must be positive", line_no);
        if (!(c.y >= 0.0)) throw ValidationError("y must be nonnegative", line_no);
        out.push_back(std::move(c));
    }
    return out;
}

inline std::vector<CountyRecord> read_counties(const std::string& path) {
    auto in = open_input(path);
    return read_counties(in);
}

inline void write_counties(std::ostream& out, std::span<const CountyRecord> counties) {
    const std::size_t d = counties.empty() ? 0 : counties.front().covariates.size();
    out << "id,population";
    for (std::size_t j = 0; j < d; ++j) out << ",x" << j + 1;
    out << ",y_prev,y\n";
    for (const auto& c : counties) {
        if (c.covariates.size() != d) throw DomainError("county " + c.id + ": covariate dimension mismatch");
        out << csv::quote(c.id) << ',' << csv::format_number(c.population);
        for (double x : c.covariates) out << ',' << csv::format_number(x);
        out << ',' << csv::format_number(c.y_prev) << ',' << csv::format_number(c.y) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

inline constexpr std::string_view trajectory_header = "t,label,alpha_t,err,lower,upper,local_cov";
inline constexpr std::string_view trajectory_tag = "# aci-trajectory";

struct TrajectoryFile {
    TrajectoryReport report;
    /// Local-coverage window recorded in the file, if any.
    std::optional<std::size_t> window;
    /// Whether the configuration came from the file's comment line.
    bool has_config = false;
};

inline void write_trajectory(std::ostream& out, const TrajectoryReport& r, std::size_t window) {
    const auto& c = r.config_echo;
    out << trajectory_tag << " alpha=" << csv::format_exact(c.target_miscoverage)
        << " gamma=" << csv::format_exact(c.step_size) << " initial_level=" << csv::format_exact(c.initial_level)
        << " update=" << (c.is_weighted() ? "weighted" : "simple")
        << " decay=" << csv::format_exact(c.is_weighted() ? c.decay() : default_decay) << " window=" << window
        << " status=" << (r.complete ? "complete" : "incomplete") << '\n';
    if (!r.complete) {
        std::string why = r.failure;
        for (char& ch : why)
            if (ch == '\n' || ch == '\r') ch = ' ';
        out << "# failure " << why << '\n';
    }
    out << trajectory_header << '\n';

    std::vector<double> cov;
    if (window > 0 && window % 2 == 0 && window <= r.size()) cov = local_coverage(r.errs, window);
    for (std::size_t i = 0; i < r.size(); ++i) {
        const auto& iv = r.intervals[i];
        out << i + 1 << ',' << csv::quote(r.step_labels[i]) << ',' << csv::format_number(r.alphas[i]) << ','
            << to_int(r.errs[i]) << ',' << csv::format_number(iv.empty ? inf : iv.lower) << ','
            << csv::format_number(iv.empty ? -inf : iv.upper) << ',';
        // row i is the centre of steps [i - w/2 + 1, i + w/2]
        if (!cov.empty() && i + 1 >= window / 2 && i + window / 2 < r.size())
            out << csv::format_number(cov[i + 1 - window / 2]);
        out << '\n';
    }
}

inline void write_trajectory(const std::string& path, const TrajectoryReport& r, std::size_t window) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write '" + path + "'", 0);
    write_trajectory(out, r, window);
}

namespace detail {

inline void apply_preamble(std::string_view line, std::size_t line_no, TrajectoryFile& f) {
    std::istringstream words{std::string(line.substr(trajectory_tag.size()))};
    std::map<std::string, std::string> kv;
    std::string word;
    while (words >> word) {
        const auto eq = word.find('=');
        if (eq == std::string::npos) throw ParseError("malformed trajectory setting '" + word + "'", line_no);
        kv[word.substr(0, eq)] = word.substr(eq + 1);
    }
    const auto get = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw ParseError("trajectory settings lack '" + key + "'", line_no);
        return it->second;
    };
    AciConfig c;
    c.target_miscoverage = csv::parse_number(get("alpha"), line_no, "alpha");
    c.step_size = csv::parse_number(get("gamma"), line_no, "gamma");
    c.initial_level = csv::parse_number(get("initial_level"), line_no, "initial_level");
    const double decay = csv::parse_number(get("decay"), line_no, "decay");
    const auto& rule = get("update");
    if (rule == "simple")
        c.update_rule = SimpleUpdate{};
    else if (rule == "weighted")
        c.update_rule = WeightedGeometricUpdate{decay};
    else
        throw ParseError("unknown update rule '" + rule + "'", line_no);
    try {
        validate(c);
    } catch (const ConfigError& e) {
        throw ValidationError(e.what(), line_no);
    }
    const auto& w = get("window");
    f.window = static_cast<std::size_t>(csv::parse_number(w, line_no, "window"));
    const auto& status = get("status");
    if (status != "complete" && status != "incomplete") throw ParseError("unknown status '" + status + "'", line_no);
    f.report.complete = status == "complete";
    f.report.config_echo = c;
    f.has_config = true;
}

}  // namespace detail

inline TrajectoryFile read_trajectory(std::istream& in) {
    TrajectoryFile f;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (!header_seen && csv::next_line(in, line, line_no)) {
        if (line.rfind(trajectory_tag, 0) == 0) {
            detail::apply_preamble(line, line_no, f);
        } else if (line.rfind("# failure ", 0) == 0) {
            f.report.failure = line.substr(10);
        } else if (line == trajectory_header) {
            header_seen = true;
        } else {
            throw ParseError("trajectory header must be '" + std::string(trajectory_header) + "'", line_no);
        }
    }
    if (!header_seen) throw ParseError("missing trajectory header", line_no);

    while (csv::next_line(in, line, line_no)) {
        if (line.empty()) continue;
        const auto v = csv::split(line, line_no);
        if (v.size() != 7) throw ParseError("expected 7 fields, got " + std::to_string(v.size()), line_no);
        const double t = csv::parse_number(v[0], line_no, "step");
        if (t != static_cast<double>(f.report.size() + 1))
            throw ValidationError("steps must be numbered consecutively from 1", line_no);
        const double alpha_t = csv::parse_number(v[2], line_no, "alpha_t");
        ErrBit err;
        if (v[3] == "0")
            err = ErrBit::covered;
        else if (v[3] == "1")
            err = ErrBit::miscovered;
        else
            throw ParseError("err must be 0 or 1, got '" + v[3] + "'", line_no);
        const double lo = csv::parse_number(v[4], line_no, "lower bound");
        const double hi = csv::parse_number(v[5], line_no, "upper bound");
        const PredictionInterval iv = lo > hi ? PredictionInterval::empty_set() : PredictionInterval{lo, hi, false};
        if (!v[6].empty()) csv::parse_number(v[6], line_no, "local coverage");
        f.report.append(v[1], alpha_t, err, iv);
    }
    return f;
}

inline TrajectoryFile read_trajectory(const std::string& path) {
    auto in = open_input(path);
    return read_trajectory(in);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

/// Finite numbers as-is, infinities and NaN as null.
inline nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const AciConfig& c) {
    nlohmann::json j;
    j["alpha"] = c.target_miscoverage;
    j["gamma"] = c.step_size;
    j["initial_level"] = c.initial_level;
    j["update"] = c.is_weighted() ? "weighted" : "simple";
    if (c.is_weighted()) j["decay"] = c.decay();
    return j;
}

inline nlohmann::json to_json(const CoverageSummary& s) {
    nlohmann::json j;
    j["average_coverage"] = json_number(s.average_coverage);
    j["max_local_deviation"] = json_number(s.max_local_deviation);
    j["prop_bound_value"] = json_number(s.prop_bound_value);
    j["prop_bound_satisfied"] = s.prop_bound_satisfied;
    j["steps"] = s.steps;
    j["window"] = s.window;
    return j;
}

inline nlohmann::json to_json(const TheoryReport& r) {
    nlohmann::json j;
    j["B_hat"] = r.B_hat;
    j["B_se"] = r.B_se;
    j["sigmaB2_hat"] = r.sigmaB2_hat;
    j["sigmaB2_se"] = r.sigmaB2_se;
    j["spectral_gap"] = r.spectral_gap;
    j["alpha_star_by_state"] = r.alpha_star_by_state;
    j["stationary_distribution"] = r.stationary;
    nlohmann::json bounds = nlohmann::json::object();
    for (const auto& [k, v] : r.bound_values) bounds[k] = json_number(v);
    j["bound_values"] = bounds;
    nlohmann::json emp = nlohmann::json::object();
    for (const auto& [k, v] : r.empirical_values) emp[k] = json_number(v);
    j["empirical_values"] = emp;
    return j;
}

}  // namespace aci
