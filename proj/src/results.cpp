#include "dlb/results.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "dlb/errors.hpp"

#ifndef DLB_VERSION
#define DLB_VERSION "0.0.0"
#endif

namespace dlb {

using nlohmann::json;

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

std::string results_csv(std::vector<RunRecord> records) {
    canonicalize(records);
    std::string out = kResultsHeader;
    out += '\n';
    for (const RunRecord& r : records) {
        out += r.kind;
        out += ',' + std::to_string(r.depth);
        out += ',' + std::to_string(r.width);
        out += ',' + std::to_string(r.params);
        out += ',' + format_double(r.lr);
        out += ',' + std::to_string(r.seed);
        out += ',' + std::to_string(r.epochs);
        out += ',' + r.stop_reason;
        out += ',' + format_double(r.train_metric);
        out += ',' + format_double(r.test_metric);
        out += '\n';
    }
    return out;
}

namespace {

void write_text(const std::string& text, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.close();
    if (!out) throw IoError("write to '" + path + "' failed");
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string::npos) return out;
        start = pos + 1;
    }
}

const std::set<std::string>& sgd_stop_reasons() {
    static const std::set<std::string> s{"loss_threshold", "accuracy_threshold", "epoch_cap", "diverged",
                                         "all_diverged"};
    return s;
}

const std::set<std::string>& ntk_stop_reasons() {
    static const std::set<std::string> s{"kernel", "singular"};
    return s;
}

}  // namespace

void write_results(const std::vector<RunRecord>& records, const std::string& path) {
    write_text(results_csv(records), path);
}

json make_manifest(const json& config, const std::string& command) {
    json m;
    m["tool"] = "dlb";
    m["version"] = DLB_VERSION;
    m["command"] = command;
    m["columns"] = kResultsHeader;
    m["config"] = config;
    return m;
}

json make_timing(std::vector<RunRecord> records) {
    canonicalize(records);
    json rows = json::array();
    double total = 0.0;
    for (const RunRecord& r : records) {
        rows.push_back({{"kind", r.kind}, {"depth", r.depth}, {"lr", r.lr}, {"seed", r.seed}, {"seconds", r.wall_time}});
        total += r.wall_time;
    }
    return {{"rows", rows}, {"total_seconds", total}};
}

void write_json(const json& value, const std::string& path) { write_text(value.dump(2) + "\n", path); }

std::vector<RunRecord> parse_results(const std::string& text, const std::string& source, const RowSchema& schema) {
    std::vector<RunRecord> records;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& column, const std::string& reason) {
        throw ParseError(source, "line " + std::to_string(line_no) + ": " + column, reason);
    };
    if (!std::getline(in, line)) {
        line_no = 1;
        fail("header", "empty file");
    }
    line_no = 1;
    if (line != kResultsHeader) fail("header", "unexpected header '" + line + "'");

    auto parse_int = [&](const std::string& s, const std::string& column, auto& out) {
        const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail(column, "not an integer: '" + s + "'");
    };
    auto parse_double = [&](const std::string& s, const std::string& column) {
        double v = 0.0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
            fail(column, "not a number: '" + s + "'");
        return v;
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) fail("row", "empty line");
        const std::vector<std::string> f = split(line, ',');
        if (f.size() != 10) fail("row", "expected 10 fields, got " + std::to_string(f.size()));
        RunRecord r;
        r.kind = f[0];
        if (r.kind != "sgd" && r.kind != "ntk") fail("kind", "must be sgd or ntk");
        parse_int(f[1], "depth", r.depth);
        parse_int(f[2], "width", r.width);
        parse_int(f[3], "params", r.params);
        r.lr = parse_double(f[4], "lr");
        parse_int(f[5], "seed", r.seed);
        parse_int(f[6], "epochs", r.epochs);
        r.stop_reason = f[7];
        r.train_metric = parse_double(f[8], "train_metric");
        r.test_metric = parse_double(f[9], "test_metric");

        if (r.depth < 1) fail("depth", "must be >= 1");
        if (r.epochs < 0) fail("epochs", "must be >= 0");
        if (r.kind == "ntk") {
            if (!ntk_stop_reasons().count(r.stop_reason)) fail("stop_reason", "invalid for ntk: " + r.stop_reason);
            if (r.width != 0 || r.params != 0 || r.lr != 0.0 || r.epochs != 0)
                fail("width", "ntk rows carry zero width, params, lr and epochs");
        } else {
            if (!sgd_stop_reasons().count(r.stop_reason)) fail("stop_reason", "invalid for sgd: " + r.stop_reason);
            if (r.width < 1) fail("width", "must be >= 1");
            if (!(r.lr >= 0.0) || !std::isfinite(r.lr)) fail("lr", "must be finite and >= 0");
            if (schema.d) {
                const std::int64_t base = parameter_count(*schema.d, r.depth, r.width);
                const bool ok = schema.init ? r.params == base + (*schema.init == InitKind::kNtk ? 1 : 0)
                                            : (r.params == base || r.params == base + 1);
                if (!ok) fail("params", "does not match depth " + std::to_string(r.depth) + " and width " +
                                            std::to_string(r.width));
            } else if (r.params < 1) {
                fail("params", "must be >= 1");
            }
        }
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<RunRecord> read_results(const std::string& path, const RowSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFound("results file '" + path + "' not found");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_results(ss.str(), path, schema);
}

std::vector<ReportRow> aggregate(const std::vector<RunRecord>& records, bool by_lr) {
    using Key = std::tuple<int, double, std::string>;
    std::map<Key, std::vector<double>> values;
    std::map<Key, std::size_t> excluded;
    for (const RunRecord& r : records) {
        const Key key{r.depth, by_lr ? r.lr : 0.0, r.kind};
        values[key];
        const bool failed = r.stop_reason == "diverged" || r.stop_reason == "all_diverged" ||
                            r.stop_reason == "singular" || !std::isfinite(r.test_metric);
        if (failed)
            ++excluded[key];
        else
            values[key].push_back(r.test_metric);
    }
    std::vector<ReportRow> rows;
    for (const auto& [key, v] : values) {
        ReportRow row;
        row.depth = std::get<0>(key);
        if (by_lr) row.lr = std::get<1>(key);
        row.kind = std::get<2>(key);
        row.n = v.size();
        row.excluded = excluded.count(key) ? excluded.at(key) : 0;
        if (!v.empty()) {
            double sum = 0.0;
            for (double x : v) sum += x;
            row.mean = sum / static_cast<double>(v.size());
        } else {
            row.mean = std::numeric_limits<double>::quiet_NaN();
        }
        if (v.size() >= 2) {
            double ss = 0.0;
            for (double x : v) ss += (x - row.mean) * (x - row.mean);
            row.stderr_ = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
        }
        rows.push_back(row);
    }
    return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows, bool by_lr) {
    std::string out = by_lr ? "kind,depth,lr,n,excluded,mean,stderr\n" : "kind,depth,n,excluded,mean,stderr\n";
    for (const ReportRow& r : rows) {
        out += r.kind + ',' + std::to_string(r.depth);
        if (by_lr) out += ',' + format_double(r.lr.value_or(0.0));
        out += ',' + std::to_string(r.n) + ',' + std::to_string(r.excluded);
        out += ',' + format_double(r.mean) + ',' + format_double(r.stderr_) + '\n';
    }
    return out;
}

}  // namespace dlb
