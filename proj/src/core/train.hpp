#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "objective.hpp"
#include "teacher.hpp"

namespace digpt {

// Linear warmup to peak, then cosine decay to min_lr. Continuous at the
// boundary and non-negative everywhere.
double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double peak, double min_lr);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Decoupled AdamW over parallel tensor lists (canonical visit order). With a
// zero gradient the update is exactly -lr * weight_decay * param.
template <class T>
void adamw_step(std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
                std::vector<Tensor<T>*>& m, std::vector<Tensor<T>*>& v, int64_t t, double lr,
                const AdamWConfig& c) {
    if (t < 1) throw ConfigError("adamw_step: t must be >= 1");
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    const T bc1 = static_cast<T>(1.0 - std::pow(c.beta1, static_cast<double>(t)));
    const T bc2 = static_cast<T>(1.0 - std::pow(c.beta2, static_cast<double>(t)));
    const T lr_t = static_cast<T>(lr), eps = static_cast<T>(c.eps), wd = static_cast<T>(c.weight_decay);
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = *grads[i];
        Tensor<T>& mi = *m[i];
        Tensor<T>& vi = *v[i];
        for (size_t j = 0; j < p.v.size(); ++j) {
            mi.v[j] = b1 * mi.v[j] + (T(1) - b1) * g.v[j];
            vi.v[j] = b2 * vi.v[j] + (T(1) - b2) * g.v[j] * g.v[j];
            const T mhat = mi.v[j] / bc1;
            const T vhat = vi.v[j] / bc2;
            p.v[j] -= lr_t * (mhat / (std::sqrt(vhat) + eps)) + lr_t * wd * p.v[j];
        }
    }
}

template <class T>
std::vector<Tensor<T>*> param_ptrs(ModelParams<T>& p) {
    std::vector<Tensor<T>*> out;
    visit_params(p, [&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
    return out;
}

// ------------------------------------------------------------------ metrics ---

struct MetricsRecord {
    int64_t step = 0;
    int epoch = 0;
    double loss_total = 0, loss_gen = 0, loss_dis = 0;
    double lr = 0;
    double time_ms = 0;
};

// Line-delimited key=value records, one per step; '#' lines are comments.
class MetricsLog {
public:
    MetricsLog() = default;
    MetricsLog(const std::string& path, uint64_t config_hash, bool append);
    void write(const MetricsRecord& r);
    void comment(const std::string& text);
    const std::string& path() const { return path_; }

    static std::vector<MetricsRecord> read(const std::string& path, uint64_t* config_hash = nullptr);

private:
    std::string path_;
    void* file_ = nullptr;  // FILE*, flushed per record
};

// --------------------------------------------------------------- train state ---

struct TrainState {
    Config config;
    int teacher_dim = 0;
    int num_classes = 0;
    ModelParams<float> params;
    ModelParams<float> adam_m;
    ModelParams<float> adam_v;
    int64_t step = 0;
    Rng rng;
};

TrainState init_train_state(const Config& cfg, int teacher_dim, int num_classes = 0);

void checkpoint_save(TrainState& state, const std::string& path);
TrainState checkpoint_load(const std::string& path);

// ------------------------------------------------------------------ training ---

TeacherProvider<float> make_teacher_provider(const Config& cfg);

// One optimizer step over a batch of dataset indices. All per-sample
// randomness is derived from (seed, step, position), so any step can be
// replayed after a checkpoint restore.
MetricsRecord train_step(TrainState& state, const LabeledDataset& data, const std::vector<size_t>& batch_indices,
                         const TeacherProvider<float>& teacher, const LossSpec& spec, double lr);

struct PretrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    MetricsRecord final_metrics;
    int64_t steps = 0;
};

PretrainResult run_pretraining(const Config& cfg, const std::string& resume_from = "");

// Deterministic sample order for one epoch (pure function of seed + epoch).
std::vector<size_t> epoch_order(uint64_t seed, int epoch, size_t n);

// Augmented patch tensor for sample i at a given step (pure given counters).
Tensor<float> prepare_patches(const Config& cfg, const Image& img, uint64_t seed, int64_t step, size_t slot);

}  // namespace digpt
