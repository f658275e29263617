#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mira/tasks.hpp"

namespace mira {

// A[i][j] = accuracy on task j's test split after finishing training step i.
// CL populates the lower triangle including the diagonal; unpopulated
// entries stay negative.
struct AccuracyMatrix {
    std::vector<std::vector<double>> a;

    int steps() const { return static_cast<int>(a.size()); }
    bool populated(int i, int j) const {
        return i >= 0 && i < steps() && j >= 0 && j < static_cast<int>(a[i].size()) && a[i][j] >= 0.0;
    }
    void append_row(const std::vector<double>& accs);
};

// Mean over tasks of the final row.
double avg_accuracy(const AccuracyMatrix& m);

// Mean over tasks j < T-1 of (best historical accuracy on j) - (final
// accuracy on j). Negative values indicate backward transfer; no clamping.
double forgetting(const AccuracyMatrix& m);

struct EvalReport {
    Setting setting = Setting::DIL;
    AccuracyMatrix matrix;
    double final_avg_acc = 0.0;
    double step_avg_acc = 0.0;  // mean over steps of the running row average
    std::optional<double> forgetting_value;
    std::uint64_t degenerate_reads = 0;
    std::uint64_t total_reads = 0;
    bool degenerate_warning = false;
    std::uint64_t seed = 0;
    std::string config_json;  // config echo

    static EvalReport from_matrix(Setting setting, const AccuracyMatrix& m);
};

bool operator==(const EvalReport& a, const EvalReport& b);

void write_metrics_csv(const std::string& path, const EvalReport& report);
void write_report_json(const std::string& path, const EvalReport& report);

}  // namespace mira
