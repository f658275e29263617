#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mira/tensor.hpp"

namespace mira {

enum class Setting { DG, DIL, CIL };

const char* to_string(Setting s);
Setting setting_from_string(const std::string& s);

struct TaskDataset {
    Tensor features;          // N x input_dim
    std::vector<int> labels;  // global class ids
    int task_id = 0;
    int domain_id = 0;
    std::vector<int> label_set;  // sorted unique class ids

    int size() const { return features.empty() ? 0 : features.rows(); }
    void validate() const;
};

// Synthetic generation and split parameters.
struct StreamSpec {
    int num_classes = 8;
    int num_domains = 4;
    int samples_per_class = 200;  // per class per domain
    double domain_shift = 1.0;
    int input_dim = 16;
    double noise_stddev = 0.3;
    double test_fraction = 0.25;
    int cil_num_tasks = 4;
    int dg_holdout_domain = -1;  // -1: last domain

    int holdout() const { return dg_holdout_domain < 0 ? num_domains - 1 : dg_holdout_domain; }
    void validate(Setting setting) const;
};

// Ordered tasks plus evaluation splits. CL train splits are consumed and
// released once a task completes; test splits stay for the evaluation
// protocol. DG keeps the held-out domain as the single test set.
class TaskStream {
  public:
    Setting setting = Setting::DIL;
    std::vector<TaskDataset> test_splits;  // per task (CL); single held-out entry (DG)
    int num_classes_total = 0;
    int input_dim = 0;

    int task_count() const { return static_cast<int>(train_.size()); }
    const TaskDataset& train_task(int t) const;
    bool task_completed(int t) const;
    // Releases the train split; later access throws (data availability guard).
    void complete_task(int t);

    void set_train(std::vector<TaskDataset> train);
    void validate() const;

  private:
    std::vector<std::optional<TaskDataset>> train_;
};

// Class means on a fixed simplex; each domain applies a seeded rotation and
// translation of magnitude `domain_shift` to the means plus a fixed
// per-domain nonlinear feature warp. Within-class noise is Gaussian.
std::vector<TaskDataset> make_domain_blobs(int num_classes, int num_domains, int samples_per_class,
                                           double domain_shift, int input_dim, double noise_stddev,
                                           std::uint64_t seed);

std::vector<TaskDataset> make_domain_blobs(const StreamSpec& spec, std::uint64_t seed);

// Realizes the availability semantics: DIL one task per domain with shared
// labels, CIL disjoint ordered class groups across all domains, DG one
// training task per source domain with the held-out domain as test.
TaskStream build_stream(Setting setting, const std::vector<TaskDataset>& domains,
                        const StreamSpec& spec, std::uint64_t seed);

TaskStream make_stream(Setting setting, const StreamSpec& spec, std::uint64_t seed);

// Concatenates samples from several tasks into one dataset (label set is the
// union); used by the mixed-batch DG consolidation variant.
TaskDataset merge_tasks(const std::vector<const TaskDataset*>& parts, int task_id);

// CSV exchange: header f0..f{D-1},label,domain.
void export_domains_csv(const std::string& path, const std::vector<TaskDataset>& domains);
std::vector<TaskDataset> import_domains_csv(const std::string& path);

}  // namespace mira
