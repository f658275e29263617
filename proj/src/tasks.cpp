#include "mira/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mira/kernels.hpp"
#include "mira/rng.hpp"

namespace mira {

const char* to_string(Setting s) {
    switch (s) {
        case Setting::DG: return "dg";
        case Setting::DIL: return "dil";
        case Setting::CIL: return "cil";
    }
    return "?";
}

Setting setting_from_string(const std::string& s) {
    if (s == "dg") return Setting::DG;
    if (s == "dil") return Setting::DIL;
    if (s == "cil") return Setting::CIL;
    throw config_error("unknown setting: " + s);
}

void TaskDataset::validate() const {
    check_contract(size() >= 1, "task dataset must be non-empty");
    check_contract(static_cast<int>(labels.size()) == size(), "one label per sample required");
    std::set<int> seen(labels.begin(), labels.end());
    for (int l : seen) {
        check_contract(std::find(label_set.begin(), label_set.end(), l) != label_set.end(),
                       "label outside declared label set");
    }
}

const TaskDataset& TaskStream::train_task(int t) const {
    check_contract(t >= 0 && t < task_count(), "task index out of range");
    check_contract(train_[t].has_value(),
                   "train data for task " + std::to_string(t) + " was already consumed");
    return *train_[t];
}

bool TaskStream::task_completed(int t) const {
    check_contract(t >= 0 && t < task_count(), "task index out of range");
    return !train_[t].has_value();
}

void TaskStream::complete_task(int t) {
    check_contract(t >= 0 && t < task_count(), "task index out of range");
    train_[t].reset();
}

void TaskStream::set_train(std::vector<TaskDataset> train) {
    train_.clear();
    for (TaskDataset& d : train) train_.emplace_back(std::move(d));
}

void TaskStream::validate() const {
    check_contract(task_count() >= 1, "stream must contain at least one task");
    std::vector<const TaskDataset*> tasks;
    for (const auto& t : train_) {
        check_contract(t.has_value(), "cannot validate a partially consumed stream");
        t->validate();
        tasks.push_back(&*t);
    }
    switch (setting) {
        case Setting::DIL: {
            for (const TaskDataset* t : tasks) {
                check_contract(t->label_set == tasks[0]->label_set,
                               "DIL tasks must share one label set");
            }
            check_contract(test_splits.size() == train_.size(), "DIL needs one test split per task");
            break;
        }
        case Setting::CIL: {
            std::set<int> all;
            size_t total = 0;
            for (const TaskDataset* t : tasks) {
                all.insert(t->label_set.begin(), t->label_set.end());
                total += t->label_set.size();
            }
            check_contract(all.size() == total, "CIL label sets must be pairwise disjoint");
            check_contract(test_splits.size() == train_.size(), "CIL needs one test split per task");
            break;
        }
        case Setting::DG: {
            check_contract(test_splits.size() == 1, "DG needs exactly one held-out test set");
            const int holdout_domain = test_splits[0].domain_id;
            for (const TaskDataset* t : tasks) {
                check_contract(t->domain_id != holdout_domain,
                               "held-out domain must be absent from DG training tasks");
            }
            break;
        }
    }
}

void StreamSpec::validate(Setting setting) const {
    check_config(num_classes >= 2, "need at least two classes");
    check_config(num_domains >= (setting == Setting::DG ? 2 : 1), "not enough domains");
    check_config(samples_per_class >= 2, "need at least two samples per class");
    check_config(input_dim >= num_classes, "input_dim must be at least num_classes");
    check_config(test_fraction > 0.0 && test_fraction < 1.0, "test_fraction must be in (0,1)");
    if (setting == Setting::CIL) {
        check_config(cil_num_tasks >= 2 && cil_num_tasks <= num_classes,
                     "CIL task count must be in [2, num_classes]");
    }
    if (setting == Setting::DG) {
        check_config(holdout() >= 0 && holdout() < num_domains, "DG holdout domain out of range");
    }
}

namespace {

// Product of seeded Givens rotations with angles scaled by the shift.
Tensor domain_rotation(int dim, double shift, std::mt19937_64& rng) {
    Tensor rot = Tensor::identity(dim);
    std::uniform_int_distribution<int> pick(0, dim - 1);
    std::uniform_real_distribution<double> angle_dist(-0.25 * M_PI, 0.25 * M_PI);
    for (int k = 0; k < dim; ++k) {
        int p = pick(rng);
        int q = pick(rng);
        const double angle = shift * angle_dist(rng);
        if (p == q) continue;
        const double co = std::cos(angle), si = std::sin(angle);
        for (int r = 0; r < dim; ++r) {
            const double vp = rot.at(r, p), vq = rot.at(r, q);
            rot.at(r, p) = co * vp - si * vq;
            rot.at(r, q) = si * vp + co * vq;
        }
    }
    return rot;
}

}  // namespace

std::vector<TaskDataset> make_domain_blobs(int num_classes, int num_domains, int samples_per_class,
                                           double domain_shift, int input_dim, double noise_stddev,
                                           std::uint64_t seed) {
    check_config(num_domains >= 1, "need at least one domain");
    check_config(num_classes >= 2, "need at least two classes");
    check_config(input_dim >= num_classes, "input_dim must fit the class simplex");

    const double simplex_scale = 2.0;
    std::vector<int> all_labels(num_classes);
    std::iota(all_labels.begin(), all_labels.end(), 0);

    std::vector<TaskDataset> domains;
    domains.reserve(static_cast<size_t>(num_domains));
    for (int d = 0; d < num_domains; ++d) {
        auto rng = make_rng(seed, "domain", static_cast<std::uint64_t>(d));
        const Tensor rot = domain_rotation(input_dim, domain_shift, rng);
        Tensor shift_vec = gaussian_tensor(rng, 1, input_dim, 1.0);
        const double norm = shift_vec.frobenius_norm();
        if (norm > 0.0) shift_vec.scale_in_place(domain_shift / norm);
        const Tensor warp_gain = uniform_tensor(rng, 1, input_dim, 0.5, 1.5);
        const Tensor warp_bias = uniform_tensor(rng, 1, input_dim, -1.0, 1.0);

        // Rotated + translated class means.
        Tensor means(num_classes, input_dim);
        for (int c = 0; c < num_classes; ++c) means.at(c, c) = simplex_scale;
        means = kernels::matmul(means, rot);
        for (int c = 0; c < num_classes; ++c)
            for (int j = 0; j < input_dim; ++j) means.at(c, j) += shift_vec.at(0, j);

        TaskDataset out;
        out.task_id = d;
        out.domain_id = d;
        out.label_set = all_labels;
        out.features = Tensor(num_classes * samples_per_class, input_dim);
        out.labels.resize(static_cast<size_t>(num_classes) * samples_per_class);

        auto noise_rng = make_rng(seed, "noise", static_cast<std::uint64_t>(d));
        std::normal_distribution<double> noise(0.0, noise_stddev);
        int row = 0;
        for (int c = 0; c < num_classes; ++c) {
            for (int s = 0; s < samples_per_class; ++s, ++row) {
                out.labels[row] = c;
                for (int j = 0; j < input_dim; ++j) {
                    const double z = means.at(c, j) + noise(noise_rng);
                    out.features.at(row, j) =
                        z + domain_shift * std::tanh(warp_gain.at(0, j) * z + warp_bias.at(0, j));
                }
            }
        }
        domains.push_back(std::move(out));
    }
    return domains;
}

std::vector<TaskDataset> make_domain_blobs(const StreamSpec& spec, std::uint64_t seed) {
    return make_domain_blobs(spec.num_classes, spec.num_domains, spec.samples_per_class,
                             spec.domain_shift, spec.input_dim, spec.noise_stddev, seed);
}

namespace {

// Stratified split: within each class, a seeded shuffle sends the first
// test_fraction of samples to the test split.
std::pair<TaskDataset, TaskDataset> split_dataset(const TaskDataset& data, double test_fraction,
                                                  std::mt19937_64& rng) {
    std::vector<int> test_rows, train_rows;
    for (int label : data.label_set) {
        std::vector<int> rows;
        for (int i = 0; i < data.size(); ++i) {
            if (data.labels[i] == label) rows.push_back(i);
        }
        std::shuffle(rows.begin(), rows.end(), rng);
        const int n_test = std::max(1, static_cast<int>(std::floor(test_fraction * rows.size())));
        check_contract(n_test < static_cast<int>(rows.size()),
                       "test fraction leaves no training data for a class");
        test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + n_test);
        train_rows.insert(train_rows.end(), rows.begin() + n_test, rows.end());
    }
    std::sort(test_rows.begin(), test_rows.end());
    std::sort(train_rows.begin(), train_rows.end());

    auto gather = [&data](const std::vector<int>& rows) {
        TaskDataset out;
        out.task_id = data.task_id;
        out.domain_id = data.domain_id;
        out.label_set = data.label_set;
        out.features = Tensor(static_cast<int>(rows.size()), data.features.cols());
        out.labels.resize(rows.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            for (int j = 0; j < data.features.cols(); ++j)
                out.features.at(static_cast<int>(i), j) = data.features.at(rows[i], j);
            out.labels[i] = data.labels[rows[i]];
        }
        return out;
    };
    return {gather(train_rows), gather(test_rows)};
}

TaskDataset filter_classes(const TaskDataset& data, const std::vector<int>& classes) {
    std::vector<int> rows;
    for (int i = 0; i < data.size(); ++i) {
        if (std::find(classes.begin(), classes.end(), data.labels[i]) != classes.end())
            rows.push_back(i);
    }
    check_contract(!rows.empty(), "class filter produced an empty dataset");
    TaskDataset out;
    out.task_id = data.task_id;
    out.domain_id = data.domain_id;
    out.label_set = classes;
    out.features = Tensor(static_cast<int>(rows.size()), data.features.cols());
    out.labels.resize(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < data.features.cols(); ++j)
            out.features.at(static_cast<int>(i), j) = data.features.at(rows[i], j);
        out.labels[i] = data.labels[rows[i]];
    }
    return out;
}

}  // namespace

TaskDataset merge_tasks(const std::vector<const TaskDataset*>& parts, int task_id) {
    check_contract(!parts.empty(), "merge of zero datasets");
    int total = 0;
    for (const TaskDataset* p : parts) total += p->size();
    TaskDataset out;
    out.task_id = task_id;
    out.domain_id = -1;  // spans domains
    std::set<int> labels;
    out.features = Tensor(total, parts[0]->features.cols());
    out.labels.reserve(static_cast<size_t>(total));
    int row = 0;
    for (const TaskDataset* p : parts) {
        for (int i = 0; i < p->size(); ++i, ++row) {
            for (int j = 0; j < p->features.cols(); ++j)
                out.features.at(row, j) = p->features.at(i, j);
            out.labels.push_back(p->labels[i]);
        }
        labels.insert(p->label_set.begin(), p->label_set.end());
    }
    out.label_set.assign(labels.begin(), labels.end());
    return out;
}

TaskStream build_stream(Setting setting, const std::vector<TaskDataset>& domains,
                        const StreamSpec& spec, std::uint64_t seed) {
    spec.validate(setting);
    check_config(static_cast<int>(domains.size()) == spec.num_domains,
                 "domain count does not match spec");

    TaskStream stream;
    stream.setting = setting;
    stream.input_dim = domains[0].features.cols();
    std::set<int> classes;
    for (const TaskDataset& d : domains) classes.insert(d.label_set.begin(), d.label_set.end());
    stream.num_classes_total = static_cast<int>(classes.size());

    std::vector<TaskDataset> train;
    switch (setting) {
        case Setting::DIL: {
            for (size_t d = 0; d < domains.size(); ++d) {
                auto rng = make_rng(seed, "split", static_cast<std::uint64_t>(d));
                auto [tr, te] = split_dataset(domains[d], spec.test_fraction, rng);
                tr.task_id = static_cast<int>(d);
                te.task_id = static_cast<int>(d);
                train.push_back(std::move(tr));
                stream.test_splits.push_back(std::move(te));
            }
            break;
        }
        case Setting::CIL: {
            std::vector<int> sorted_classes(classes.begin(), classes.end());
            check_config(spec.cil_num_tasks <= static_cast<int>(sorted_classes.size()),
                         "not enough classes for the requested CIL partition");
            const int per = static_cast<int>(sorted_classes.size()) / spec.cil_num_tasks;
            const int extra = static_cast<int>(sorted_classes.size()) % spec.cil_num_tasks;
            int cursor = 0;
            for (int t = 0; t < spec.cil_num_tasks; ++t) {
                const int take = per + (t < extra ? 1 : 0);
                std::vector<int> group(sorted_classes.begin() + cursor,
                                       sorted_classes.begin() + cursor + take);
                cursor += take;
                std::vector<TaskDataset> parts;
                for (const TaskDataset& d : domains) parts.push_back(filter_classes(d, group));
                std::vector<const TaskDataset*> part_ptrs;
                for (const TaskDataset& p : parts) part_ptrs.push_back(&p);
                TaskDataset merged = merge_tasks(part_ptrs, t);
                auto rng = make_rng(seed, "split", static_cast<std::uint64_t>(t));
                auto [tr, te] = split_dataset(merged, spec.test_fraction, rng);
                train.push_back(std::move(tr));
                stream.test_splits.push_back(std::move(te));
            }
            break;
        }
        case Setting::DG: {
            const int holdout = spec.holdout();
            int t = 0;
            for (size_t d = 0; d < domains.size(); ++d) {
                if (static_cast<int>(d) == holdout) continue;
                TaskDataset task = domains[d];
                task.task_id = t++;
                train.push_back(std::move(task));
            }
            stream.test_splits.push_back(domains[holdout]);
            break;
        }
    }
    stream.set_train(std::move(train));
    stream.validate();
    return stream;
}

TaskStream make_stream(Setting setting, const StreamSpec& spec, std::uint64_t seed) {
    return build_stream(setting, make_domain_blobs(spec, seed), spec, seed);
}

void export_domains_csv(const std::string& path, const std::vector<TaskDataset>& domains) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    check_contract(!domains.empty(), "nothing to export");
    const int dim = domains[0].features.cols();
    for (int j = 0; j < dim; ++j) out << "f" << j << ",";
    out << "label,domain\r\n";
    char buf[64];
    for (const TaskDataset& d : domains) {
        for (int i = 0; i < d.size(); ++i) {
            for (int j = 0; j < dim; ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", d.features.at(i, j));
                out << buf << ",";
            }
            out << d.labels[i] << "," << d.domain_id << "\r\n";
        }
    }
}

std::vector<TaskDataset> import_domains_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw io_error("empty stream file: " + path);
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) header.push_back(field);
    }
    check_config(header.size() >= 3 && header[header.size() - 2] == "label" &&
                     header.back() == "domain",
                 "stream CSV header must be f0..fD-1,label,domain");
    const int dim = static_cast<int>(header.size()) - 2;
    for (int j = 0; j < dim; ++j) {
        check_config(header[j] == "f" + std::to_string(j), "unexpected feature column name");
    }

    struct Row {
        std::vector<double> f;
        int label, domain;
    };
    std::vector<Row> rows;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        Row row;
        for (int j = 0; j < dim; ++j) {
            if (!std::getline(ss, field, ',')) throw io_error("short CSV row");
            row.f.push_back(std::stod(field));
        }
        if (!std::getline(ss, field, ',')) throw io_error("missing label column");
        row.label = std::stoi(field);
        if (!std::getline(ss, field, ',')) throw io_error("missing domain column");
        row.domain = std::stoi(field);
        rows.push_back(std::move(row));
    }
    check_config(!rows.empty(), "stream CSV has no data rows");

    std::set<int> domain_ids;
    for (const Row& r : rows) domain_ids.insert(r.domain);
    std::vector<TaskDataset> domains;
    for (int d : domain_ids) {
        std::vector<const Row*> mine;
        std::set<int> labels;
        for (const Row& r : rows) {
            if (r.domain == d) {
                mine.push_back(&r);
                labels.insert(r.label);
            }
        }
        TaskDataset out;
        out.task_id = static_cast<int>(domains.size());
        out.domain_id = d;
        out.label_set.assign(labels.begin(), labels.end());
        out.features = Tensor(static_cast<int>(mine.size()), dim);
        out.labels.resize(mine.size());
        for (size_t i = 0; i < mine.size(); ++i) {
            for (int j = 0; j < dim; ++j) out.features.at(static_cast<int>(i), j) = mine[i]->f[j];
            out.labels[i] = mine[i]->label;
        }
        domains.push_back(std::move(out));
    }
    return domains;
}

}  // namespace mira
