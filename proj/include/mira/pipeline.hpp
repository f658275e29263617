#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mira/backbone.hpp"
#include "mira/continual.hpp"
#include "mira/memory.hpp"
#include "mira/metrics.hpp"
#include "mira/optim.hpp"
#include "mira/retrieval.hpp"
#include "mira/tasks.hpp"

namespace mira {

struct TrainConfig {
    Setting setting = Setting::DIL;
    int lora_rank = 4;
    int adapt_epochs = 5;
    int consolidate_epochs = 0;  // 0: setting default (2 for CL, 10 for DG)
    double lr_adapt = 1e-3;
    double lr_consolidate = 1e-2;  // desk-scale default; epochs here are ~40 steps
    double weight_decay = 1e-3;
    double sigma2 = -1.0;         // key init variance; < 0 means 1 / d_k
    int adapters_per_task = 2;    // m
    bool head_every_task = false;  // DIL/DG: keep training the shared head on every task
    SepKind sep_kind = SepKind::Affine;
    double softmax_beta = 1.0;
    QueryKind query_kind = QueryKind::Identity;
    int key_dim = 0;              // 0: d_k = d_h
    bool dual_gpm = true;
    double dual_gpm_eps = 0.7;
    bool project_keys = true;     // sensitivity switches for what gets projected
    bool project_queries = true;
    bool replica_data_shard = false;  // replicas train on data shards instead of full data
    bool dg_mixed_batches = false;    // DG consolidation over one mixed pool instead of per task
    int batch_size = 32;
    std::uint64_t seed = 42;
    BackboneConfig backbone;
    StreamSpec stream;

    int resolved_consolidate_epochs() const {
        if (consolidate_epochs > 0) return consolidate_epochs;
        return setting == Setting::DG ? 10 : 2;
    }
    int resolved_key_dim() const { return key_dim > 0 ? key_dim : backbone.model_dim; }
    double resolved_sigma2() const {
        return sigma2 >= 0.0 ? sigma2 : 1.0 / static_cast<double>(resolved_key_dim());
    }
    void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& json_text);

// Global class id <-> head column mapping (head columns follow block order).
struct ClassIndex {
    std::vector<int> classes;

    int col_of(int global_class) const;
    int global_of(int col) const;
    bool contains(int global_class) const;
    int size() const { return static_cast<int>(classes.size()); }
};

struct HeadBlock {
    Parameter weight;  // d_h x block_classes
    Parameter bias;    // 1 x block_classes
    std::vector<int> class_ids;
};

struct ModelState {
    TrainConfig cfg;
    BackboneConfig bcfg;  // resolved against the stream
    FrozenWeights frozen;
    std::vector<MemoryUnit> memories;   // per layer
    std::vector<QueryModule> queries;   // per layer
    std::vector<HeadBlock> head;        // one block (DIL/DG) or one per task (CIL)
    ClassIndex classes;
    std::vector<GradientSubspace> subspaces;  // key groups then query groups
    RetrievalDiag diag;
    bool degenerate_warning = false;
    int tasks_adapted = 0;
    int tasks_consolidated = 0;
    AccuracyMatrix matrix;

    std::uint64_t theta_checksum() const;    // all stored value matrices
    std::uint64_t backbone_checksum() const { return frozen.checksum(); }
    GradientSubspace* find_subspace(const std::string& group_id);
};

ModelState init_model_state(const TrainConfig& cfg, const TaskStream& stream);

struct AdaptationReport {
    // epoch-mean training loss, one sequence per adapter replica
    std::vector<std::vector<double>> replica_epoch_loss;
};

struct ConsolidationReport {
    std::vector<double> epoch_loss;
    double degenerate_rate = 0.0;
    bool degenerate_warning = false;
};

// Stage one: trains m fresh adapter replicas (jointly with the head) on the
// task and writes each into the per-layer memories under sampled keys.
AdaptationReport adaptation(const TaskDataset& data, ModelState& st, const TrainConfig& cfg);

// Stage two: modulated forwards; backprop updates only keys and query
// modules (plus the current CIL head block), with optional gradient
// projection against earlier tasks' subspaces.
ConsolidationReport consolidation(const TaskDataset& data, ModelState& st, const TrainConfig& cfg);

double evaluate_dataset(const ModelState& st, const TaskDataset& test);

// Resumable task-level steps used by run_mira and the CLI.
void mira_adapt_task(TaskStream& stream, const TrainConfig& cfg, ModelState& st, int task);
void mira_consolidate_task(TaskStream& stream, const TrainConfig& cfg, ModelState& st, int task);

EvalReport report_from_state(const ModelState& st);

EvalReport run_mira(TaskStream& stream, const TrainConfig& cfg);
EvalReport run_mira(TaskStream& stream, const TrainConfig& cfg, ModelState* out_state);

// Naive sequential fine-tuning: one persistent adapter set plus head,
// trained task by task, no memory, no consolidation.
EvalReport run_baseline(TaskStream& stream, const TrainConfig& cfg);

}  // namespace mira
