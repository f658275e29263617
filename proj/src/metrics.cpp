#include "mira/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace mira {

void AccuracyMatrix::append_row(const std::vector<double>& accs) {
    for (double v : accs) check_contract(v >= 0.0 && v <= 1.0, "accuracy must lie in [0, 1]");
    a.push_back(accs);
}

double avg_accuracy(const AccuracyMatrix& m) {
    check_contract(m.steps() >= 1, "empty accuracy matrix");
    const auto& last = m.a.back();
    check_contract(!last.empty(), "final row unpopulated");
    double s = 0.0;
    for (size_t j = 0; j < last.size(); ++j) {
        check_contract(last[j] >= 0.0, "final row has unpopulated entries");
        s += last[j];
    }
    return s / static_cast<double>(last.size());
}

double forgetting(const AccuracyMatrix& m) {
    const int t = m.steps();
    check_contract(t >= 2, "forgetting requires at least two steps");
    const auto& last = m.a.back();
    double total = 0.0;
    for (int j = 0; j + 1 < t; ++j) {
        double best = -1.0;
        for (int i = j; i + 1 < t; ++i) {
            check_contract(m.populated(i, j), "history entry unpopulated");
            best = std::max(best, m.a[i][j]);
        }
        check_contract(j < static_cast<int>(last.size()) && last[j] >= 0.0,
                       "final row has unpopulated entries");
        total += best - last[j];
    }
    return total / static_cast<double>(t - 1);
}

EvalReport EvalReport::from_matrix(Setting setting, const AccuracyMatrix& m) {
    EvalReport r;
    r.setting = setting;
    r.matrix = m;
    r.final_avg_acc = avg_accuracy(m);
    double step_sum = 0.0;
    for (int i = 0; i < m.steps(); ++i) {
        double row = 0.0;
        for (double v : m.a[i]) row += v;
        step_sum += row / static_cast<double>(m.a[i].size());
    }
    r.step_avg_acc = step_sum / static_cast<double>(m.steps());
    if (m.steps() >= 2) r.forgetting_value = forgetting(m);
    return r;
}

bool operator==(const EvalReport& a, const EvalReport& b) {
    return a.setting == b.setting && a.matrix.a == b.matrix.a && a.final_avg_acc == b.final_avg_acc &&
           a.step_avg_acc == b.step_avg_acc && a.forgetting_value == b.forgetting_value &&
           a.degenerate_reads == b.degenerate_reads && a.total_reads == b.total_reads &&
           a.seed == b.seed;
}

namespace {
std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9f", v);
    return buf;
}
}  // namespace

void write_metrics_csv(const std::string& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << "step,task,acc,avg_acc,forgetting\r\n";
    AccuracyMatrix prefix;
    for (int i = 0; i < report.matrix.steps(); ++i) {
        prefix.a.push_back(report.matrix.a[i]);
        double row_sum = 0.0;
        for (double v : report.matrix.a[i]) row_sum += v;
        const double running_avg = row_sum / static_cast<double>(report.matrix.a[i].size());
        const std::string running_forget = i >= 1 ? fmt(forgetting(prefix)) : "";
        for (size_t j = 0; j < report.matrix.a[i].size(); ++j) {
            out << i << "," << j << "," << fmt(report.matrix.a[i][j]) << "," << fmt(running_avg)
                << "," << running_forget << "\r\n";
        }
    }
}

void write_report_json(const std::string& path, const EvalReport& report) {
    nlohmann::json j;
    j["setting"] = to_string(report.setting);
    j["final_avg_acc"] = report.final_avg_acc;
    j["step_avg_acc"] = report.step_avg_acc;
    if (report.forgetting_value) {
        j["forgetting"] = *report.forgetting_value;
    } else {
        j["forgetting"] = nullptr;
    }
    j["degenerate_reads"] = report.degenerate_reads;
    j["total_reads"] = report.total_reads;
    j["degenerate_warning"] = report.degenerate_warning;
    j["seed"] = report.seed;
    j["accuracy_matrix"] = report.matrix.a;
    if (!report.config_json.empty()) {
        j["config"] = nlohmann::json::parse(report.config_json);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

}  // namespace mira
