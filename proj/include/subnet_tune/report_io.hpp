// Copyright 2026 The subnet-tune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "subnet_tune/config_io.hpp"
#include "subnet_tune/experiment.hpp"

namespace subnet_tune {

inline nlohmann::json report_to_json(const AggregateReport& rep) { return rep; }

inline AggregateReport report_from_json(const nlohmann::json& j) {
    try {
        return j.get<AggregateReport>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed report: ") + e.what());
    }
}

inline AggregateReport load_report(const std::string& path) {
    const std::filesystem::path p(path);
    const std::string file = std::filesystem::is_directory(p) ? (p / "report.json").string() : path;
    return report_from_json(read_json_file(file));
}

/// Percent for bounded scores, raw for error metrics.
inline double display_scale(const std::string& metric) { return metric == "mse" ? 1.0 : 100.0; }

inline std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

/// "mean std" with two decimals; a single seed prints "n/a" for the std.
inline std::string format_cell(const SummaryStats& s, double scale) {
    if (s.n == 0) return "aborted";
    return fmt2(s.mean * scale) + " " + (s.std_defined ? fmt2(s.std * scale) : "n/a");
}

inline std::string format_ratio(double r) { return r > 0.0 ? "x" + fmt2(r) : "n/a"; }

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

/// Metrics that appear in any cell, in first-seen order.
inline std::vector<std::string> report_metrics(const AggregateReport& rep) {
    std::vector<std::string> out;
    for (const auto& c : rep.cells)
        for (const auto& m : c.metrics)
            if (std::find(out.begin(), out.end(), m.metric) == out.end()) out.push_back(m.metric);
    return out;
}

/// One row per (strategy, size), one column per task.
inline void write_metric_table(const AggregateReport& rep, const std::string& metric, bool ood, std::ostream& out) {
    out << "strategy,size";
    for (const auto& t : rep.tasks) out << "," << csv_escape(t);
    out << "\n";
    const double scale = display_scale(metric);
    for (std::size_t size : rep.sizes) {
        for (const auto& s : rep.strategies) {
            out << csv_escape(s) << "," << size;
            for (const auto& t : rep.tasks) {
                const CellReport* c = rep.cell(s, t, size);
                const MetricSummary* m = c ? c->metric(metric) : nullptr;
                out << "," << (m ? format_cell(ood ? m->ood : m->in_domain, scale) : "");
            }
            out << "\n";
        }
    }
}

inline void write_failed_runs_table(const AggregateReport& rep, std::ostream& out) {
    out << "strategy,size,task,primary_metric,failed_run\n";
    for (const auto& c : rep.cells) {
        out << csv_escape(c.strategy) << "," << c.size << "," << csv_escape(c.task) << "," << c.primary_metric << ","
            << (c.has_vanilla_ref ? (c.failed_run ? "yes" : "no") : "n/a") << "\n";
    }
    for (const auto& a : rep.averages) {
        out << csv_escape(a.strategy) << "," << a.size << ",average,oriented_mean,"
            << (a.has_vanilla_ref ? (a.failed_run ? "yes" : "no") : "n/a") << "\n";
    }
}

inline void write_cases_table(const AggregateReport& rep, std::ostream& out) {
    out << "strategy,size,task,easy_fraction,hard_fraction\n";
    for (const auto& c : rep.cells) {
        if (!c.has_cases) continue;
        out << csv_escape(c.strategy) << "," << c.size << "," << csv_escape(c.task) << ","
            << fmt2(100.0 * c.cases.easy_fraction) << "," << fmt2(100.0 * c.cases.hard_fraction) << "\n";
    }
}

inline void write_timing_table(const AggregateReport& rep, std::ostream& out) {
    out << "strategy,size,task,mean_seconds,overhead_seconds,vs_vanilla\n";
    char buf[64];
    for (const auto& c : rep.cells) {
        out << csv_escape(c.strategy) << "," << c.size << "," << csv_escape(c.task) << ",";
        std::snprintf(buf, sizeof buf, "%.4f,%.4f", c.mean_seconds, c.mean_overhead_seconds);
        out << buf << "," << format_ratio(c.time_ratio) << "\n";
    }
}

/// report.json plus tables/*.csv under `dir`.
inline void write_report(const AggregateReport& rep, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "tables");
    auto open = [](const std::filesystem::path& p) {
        std::ofstream f(p);
        if (!f) throw ConfigError("cannot write '" + p.string() + "'");
        return f;
    };
    {
        auto f = open(dir / "report.json");
        f << report_to_json(rep).dump(2) << "\n";
    }
    for (const auto& m : report_metrics(rep)) {
        auto in = open(dir / "tables" / (m + "_in_domain.csv"));
        write_metric_table(rep, m, false, in);
        auto ood = open(dir / "tables" / (m + "_ood.csv"));
        write_metric_table(rep, m, true, ood);
    }
    auto failed = open(dir / "tables" / "failed_runs.csv");
    write_failed_runs_table(rep, failed);
    auto cases = open(dir / "tables" / "cases.csv");
    write_cases_table(rep, cases);
    auto timing = open(dir / "tables" / "timing.csv");
    write_timing_table(rep, timing);
}

/// Human-readable summary of the primary metric per cell.
inline std::string format_report_text(const AggregateReport& rep) {
    std::ostringstream out;
    out << "experiment: " << rep.name << "\n";
    out << "seeds: " << rep.seeds.size() << "  reference: " << (rep.vanilla.empty() ? "none" : rep.vanilla) << "\n";
    for (std::size_t size : rep.sizes) {
        out << "\n[size " << size << "]\n";
        for (const auto& s : rep.strategies) {
            out << "  " << s << "\n";
            for (const auto& t : rep.tasks) {
                const CellReport* c = rep.cell(s, t, size);
                if (!c) continue;
                const double scale = display_scale(c->primary_metric);
                out << "    " << t << "  " << c->primary_metric << " " << format_cell(c->primary().in_domain, scale)
                    << "  ood " << format_cell(c->primary().ood, scale) << "  time " << format_ratio(c->time_ratio);
                if (c->has_vanilla_ref && c->failed_run) out << "  FAILED";
                if (c->aborted) out << "  aborted=" << c->aborted;
                out << "\n";
            }
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Side-by-side comparison of saved reports.

struct ComparisonRow {
    std::string report;  // name of the compared report
    std::string strategy;
    std::string task;
    std::size_t size = 0;
    std::string metric;
    double mean = 0.0;
    double std = 0.0;
    double delta_mean = 0.0;  // against the first report's cell
    double delta_std = 0.0;
    double time_ratio = 0.0;
};

/// Compares each report against the first one, cell by cell on the primary
/// metric. All reports must cover the same tasks; mismatches are listed in
/// the thrown ConfigError.
inline std::vector<ComparisonRow> compare_reports(const std::vector<AggregateReport>& reps) {
    if (reps.size() < 2) throw ConfigError("compare needs at least two reports");
    const std::set<std::string> base(reps.front().tasks.begin(), reps.front().tasks.end());
    std::string mismatch;
    for (std::size_t i = 1; i < reps.size(); ++i) {
        const std::set<std::string> other(reps[i].tasks.begin(), reps[i].tasks.end());
        for (const auto& t : base)
            if (!other.count(t)) mismatch += "\n  '" + t + "' missing from " + reps[i].name;
        for (const auto& t : other)
            if (!base.count(t)) mismatch += "\n  '" + t + "' missing from " + reps.front().name;
    }
    if (!mismatch.empty()) throw ConfigError("reports cover different tasks:" + mismatch);

    std::vector<ComparisonRow> rows;
    for (const auto& rep : reps) {
        for (const auto& c : rep.cells) {
            const CellReport* ref = reps.front().cell(c.strategy, c.task, c.size);
            ComparisonRow r;
            r.report = rep.name;
            r.strategy = c.strategy;
            r.task = c.task;
            r.size = c.size;
            r.metric = c.primary_metric;
            r.mean = c.primary().in_domain.mean;
            r.std = c.primary().in_domain.std;
            if (ref && ref->metric(c.primary_metric)) {
                r.delta_mean = r.mean - ref->metric(c.primary_metric)->in_domain.mean;
                r.delta_std = r.std - ref->metric(c.primary_metric)->in_domain.std;
            }
            r.time_ratio = c.time_ratio;
            rows.push_back(r);
        }
    }
    return rows;
}

inline void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& out) {
    out << "report,strategy,task,size,metric,mean,std,delta_mean,delta_std,vs_vanilla\n";
    for (const auto& r : rows) {
        const double s = display_scale(r.metric);
        out << csv_escape(r.report) << "," << csv_escape(r.strategy) << "," << csv_escape(r.task) << "," << r.size
            << "," << r.metric << "," << fmt2(r.mean * s) << "," << fmt2(r.std * s) << "," << fmt2(r.delta_mean * s)
            << "," << fmt2(r.delta_std * s) << "," << format_ratio(r.time_ratio) << "\n";
    }
}

}  // namespace subnet_tune
