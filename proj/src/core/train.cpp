#include "train.hpp"

#include <omp.h>

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "binio.hpp"

namespace fs = std::filesystem;

namespace digpt {

double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double peak, double min_lr) {
    if (warmup_steps >= total_steps) throw ConfigError("warmup steps must be < total steps");
    if (step < 0 || step > total_steps) throw ConfigError("lr_at: step out of range");
    if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return min_lr + (peak - min_lr) * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
}

// ------------------------------------------------------------------ metrics ---

MetricsLog::MetricsLog(const std::string& path, uint64_t config_hash, bool append) : path_(path) {
    if (!path.empty()) {
        fs::path p(path);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
    }
    FILE* f = std::fopen(path.c_str(), append ? "ab" : "wb");
    if (!f) throw IoError("cannot open metrics log: " + path);
    file_ = f;
    if (!append) std::fprintf(f, "# digpt-metrics v1 config_hash=%016" PRIx64 "\n", config_hash);
}

void MetricsLog::write(const MetricsRecord& r) {
    auto* f = static_cast<FILE*>(file_);
    std::fprintf(f, "step=%" PRId64 " epoch=%d loss_total=%.10g loss_gen=%.10g loss_dis=%.10g lr=%.10g time_ms=%.3f\n",
                 r.step, r.epoch, r.loss_total, r.loss_gen, r.loss_dis, r.lr, r.time_ms);
    std::fflush(f);
}

void MetricsLog::comment(const std::string& text) {
    auto* f = static_cast<FILE*>(file_);
    std::fprintf(f, "# %s\n", text.c_str());
    std::fflush(f);
}

std::vector<MetricsRecord> MetricsLog::read(const std::string& path, uint64_t* config_hash) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open metrics log: " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string tag = "config_hash=";
            const size_t pos = line.find(tag);
            if (pos != std::string::npos && config_hash)
                *config_hash = std::strtoull(line.c_str() + pos + tag.size(), nullptr, 16);
            continue;
        }
        MetricsRecord r;
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) {
            const size_t eq = tok.find('=');
            if (eq == std::string::npos) continue;
            const std::string k = tok.substr(0, eq);
            const std::string v = tok.substr(eq + 1);
            if (k == "step")
                r.step = std::strtoll(v.c_str(), nullptr, 10);
            else if (k == "epoch")
                r.epoch = std::atoi(v.c_str());
            else if (k == "loss_total")
                r.loss_total = std::strtod(v.c_str(), nullptr);
            else if (k == "loss_gen")
                r.loss_gen = std::strtod(v.c_str(), nullptr);
            else if (k == "loss_dis")
                r.loss_dis = std::strtod(v.c_str(), nullptr);
            else if (k == "lr")
                r.lr = std::strtod(v.c_str(), nullptr);
            else if (k == "time_ms")
                r.time_ms = std::strtod(v.c_str(), nullptr);
        }
        out.push_back(r);
    }
    return out;
}

// --------------------------------------------------------------- checkpoints ---

namespace {

constexpr char kCkptMagic[4] = {'D', 'G', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;

void write_tensor_section(std::ostream& os, ModelParams<float>& p) {
    uint64_t count = 0;
    visit_params(p, [&](const std::string&, Tensor<float>&) { ++count; });
    binio::write_le<uint64_t>(os, count);
    visit_params(p, [&](const std::string& name, Tensor<float>& t) {
        binio::write_string(os, name);
        binio::write_le<uint64_t>(os, static_cast<uint64_t>(t.rows));
        binio::write_le<uint64_t>(os, static_cast<uint64_t>(t.cols));
        binio::write_f32_array(os, t.v);
    });
}

void read_tensor_section(std::istream& is, ModelParams<float>& p) {
    const uint64_t count = binio::read_le<uint64_t>(is);
    uint64_t expected = 0;
    visit_params(p, [&](const std::string&, Tensor<float>&) { ++expected; });
    if (count != expected) throw FormatError("checkpoint tensor count mismatch");
    visit_params(p, [&](const std::string& name, Tensor<float>& t) {
        const std::string got = binio::read_string(is, 1 << 16);
        if (got != name) throw FormatError("checkpoint tensor order mismatch: expected " + name + ", got " + got);
        const auto rows = binio::read_le<uint64_t>(is);
        const auto cols = binio::read_le<uint64_t>(is);
        if (rows != static_cast<uint64_t>(t.rows) || cols != static_cast<uint64_t>(t.cols))
            throw FormatError("checkpoint tensor shape mismatch for " + name);
        binio::read_f32_array(is, t.v);
    });
}

}  // namespace

TrainState init_train_state(const Config& cfg, int teacher_dim, int num_classes) {
    TrainState st;
    st.config = cfg;
    st.teacher_dim = teacher_dim;
    st.num_classes = num_classes;
    ModelConfig mc = cfg.model_config();
    mc.teacher_dim = teacher_dim;
    mc.num_classes = num_classes;
    st.rng = Rng::derive(static_cast<uint64_t>(cfg.get_int("seed")), "init");
    st.params = init_params<float>(mc, st.rng);
    st.adam_m = zeros_like(st.params);
    st.adam_v = zeros_like(st.params);
    st.step = 0;
    return st;
}

void checkpoint_save(TrainState& state, const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    binio::write_bytes(os, kCkptMagic, 4);
    binio::write_le<uint32_t>(os, kCkptVersion);
    binio::write_string(os, state.config.snapshot());
    binio::write_le<uint32_t>(os, static_cast<uint32_t>(state.teacher_dim));
    binio::write_le<uint32_t>(os, static_cast<uint32_t>(state.num_classes));
    binio::write_le<uint64_t>(os, static_cast<uint64_t>(state.step));
    binio::write_string(os, state.rng.serialize());
    write_tensor_section(os, state.params);
    write_tensor_section(os, state.adam_m);
    write_tensor_section(os, state.adam_v);
    if (!os) throw IoError("checkpoint write failed: " + path);
}

TrainState checkpoint_load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    binio::read_bytes(is, magic, 4);
    if (std::memcmp(magic, kCkptMagic, 4) != 0) throw FormatError("bad checkpoint magic in " + path);
    const uint32_t version = binio::read_le<uint32_t>(is);
    if (version != kCkptVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + path);

    TrainState st;
    st.config = Config::from_snapshot(binio::read_string(is));
    st.teacher_dim = static_cast<int>(binio::read_le<uint32_t>(is));
    st.num_classes = static_cast<int>(binio::read_le<uint32_t>(is));
    st.step = static_cast<int64_t>(binio::read_le<uint64_t>(is));
    st.rng.deserialize(binio::read_string(is, 1 << 20));
    ModelConfig mc = st.config.model_config();
    mc.teacher_dim = st.teacher_dim;
    mc.num_classes = st.num_classes;
    st.params = alloc_params<float>(mc);
    st.adam_m = alloc_params<float>(mc);
    st.adam_v = alloc_params<float>(mc);
    read_tensor_section(is, st.params);
    read_tensor_section(is, st.adam_m);
    read_tensor_section(is, st.adam_v);
    return st;
}

// ------------------------------------------------------------------ training ---

TeacherProvider<float> make_teacher_provider(const Config& cfg) {
    const TeacherKind kind = parse_teacher_kind(cfg.get_string("teacher.kind"));
    switch (kind) {
        case TeacherKind::pixel: return TeacherProvider<float>::pixel();
        case TeacherKind::frozen: {
            TrainState t = checkpoint_load(cfg.get_string("teacher.path"));
            return TeacherProvider<float>::frozen(std::move(t.params));
        }
        case TeacherKind::cache: {
            auto cache = std::make_shared<TeacherCache>(TeacherCache::read(cfg.get_string("teacher.path")));
            return TeacherProvider<float>::cache(std::move(cache));
        }
    }
    throw ConfigError("unreachable teacher kind");
}

std::vector<size_t> epoch_order(uint64_t seed, int epoch, size_t n) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng::derive(seed, "epoch-order", static_cast<uint64_t>(epoch));
    rng.shuffle(order);
    return order;
}

Tensor<float> prepare_patches(const Config& cfg, const Image& img, uint64_t seed, int64_t step, size_t slot) {
    const int size = cfg.get_int("data.image_size");
    Rng rng = Rng::derive(seed, "augment", static_cast<uint64_t>(step), static_cast<uint64_t>(slot));
    const AugmentParams ap = draw_augment(rng, img.h, img.w, cfg.get_flag("augment.crop"),
                                          cfg.get_float("augment.crop_scale_min"),
                                          cfg.get_float("augment.crop_scale_max"), cfg.get_flag("augment.flip"));
    const Image view = apply_augment(img, ap, size, size);
    const ClusterLayout layout = cfg.model_config().layout();
    return patchify<float>(view, layout);
}

namespace {

int resolve_threads(const Config& cfg) {
    int t = cfg.get_int("train.threads");
    if (t <= 0) t = static_cast<int>(std::thread::hardware_concurrency());
    return std::max(1, std::min(t, 64));
}

std::vector<int> draw_mim_clusters(const LossSpec& spec, int num_clusters, Rng& rng) {
    const int masked = std::max(1, std::min(num_clusters - 1, static_cast<int>(std::lround(
                                                                  spec.mim_mask_ratio * num_clusters))));
    std::vector<int> ids(static_cast<size_t>(num_clusters));
    for (int i = 0; i < num_clusters; ++i) ids[static_cast<size_t>(i)] = i;
    rng.shuffle(ids);
    ids.resize(static_cast<size_t>(masked));
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace

MetricsRecord train_step(TrainState& state, const LabeledDataset& data, const std::vector<size_t>& batch_indices,
                         const TeacherProvider<float>& teacher, const LossSpec& spec, double lr) {
    const auto t0 = std::chrono::steady_clock::now();
    const Config& cfg = state.config;
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));
    const ClusterLayout layout = state.params.cfg.layout();
    const int batch = static_cast<int>(batch_indices.size());
    const int threads = std::min(resolve_threads(cfg), batch);

    // Randomness is drawn up front on the main thread so worker scheduling
    // cannot reorder rng consumption.
    std::vector<PermutedSequence> perms(static_cast<size_t>(batch));
    std::vector<std::vector<int>> mim_clusters(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) {
        Rng rng = Rng::derive(seed, "sample", static_cast<uint64_t>(state.step), static_cast<uint64_t>(i));
        perms[static_cast<size_t>(i)] = sample_permutation(layout.num_clusters, rng);
        if (spec.paradigm == Paradigm::mim)
            mim_clusters[static_cast<size_t>(i)] = draw_mim_clusters(spec, layout.num_clusters, rng);
    }

    std::vector<ModelParams<float>> thread_grads;
    std::vector<LossReport> thread_reports(static_cast<size_t>(threads));
    thread_grads.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) thread_grads.push_back(zeros_like(state.params));

    const double gscale = 1.0 / batch;
    std::exception_ptr worker_error;

#pragma omp parallel num_threads(threads)
    {
        const int tid = omp_get_thread_num();
#pragma omp for schedule(static)
        for (int i = 0; i < batch; ++i) {
            try {
                const size_t idx = batch_indices[static_cast<size_t>(i)];
                const Tensor<float> patches =
                    prepare_patches(cfg, data.train_images[idx], seed, state.step, static_cast<size_t>(i));
                const TeacherTokens<float> tokens = teacher.tokens(patches, data.train_ids[idx], layout);
                const LossReport r =
                    sample_loss(state.params, patches, perms[static_cast<size_t>(i)], tokens, spec,
                                mim_clusters[static_cast<size_t>(i)], &thread_grads[static_cast<size_t>(tid)],
                                gscale);
                thread_reports[static_cast<size_t>(tid)].accumulate(r);
            } catch (...) {
#pragma omp critical
                if (!worker_error) worker_error = std::current_exception();
            }
        }
    }
    if (worker_error) std::rethrow_exception(worker_error);

    // Deterministic reduction: thread 0 buffer accumulates the rest in order.
    auto grad_ptrs = param_ptrs(thread_grads[0]);
    for (int t = 1; t < threads; ++t) {
        auto src = param_ptrs(thread_grads[static_cast<size_t>(t)]);
        for (size_t i = 0; i < grad_ptrs.size(); ++i) grad_ptrs[i]->map() += src[i]->map();
    }
    LossReport report;
    for (const auto& r : thread_reports) report.accumulate(r);
    report.scale(1.0 / batch);

    if (!std::isfinite(report.loss_total))
        throw std::runtime_error("non-finite loss at step " + std::to_string(state.step) +
                                 " (loss_total=" + std::to_string(report.loss_total) + ")");

    AdamWConfig ac;
    ac.beta1 = cfg.get_float("train.beta1");
    ac.beta2 = cfg.get_float("train.beta2");
    ac.weight_decay = cfg.get_float("train.weight_decay");
    auto params = param_ptrs(state.params);
    auto m = param_ptrs(state.adam_m);
    auto v = param_ptrs(state.adam_v);
    std::vector<const Tensor<float>*> grads(grad_ptrs.begin(), grad_ptrs.end());
    adamw_step(params, grads, m, v, state.step + 1, lr, ac);
    state.step += 1;

    MetricsRecord rec;
    rec.step = state.step;
    rec.loss_total = report.loss_total;
    rec.loss_gen = report.loss_gen;
    rec.loss_dis = report.loss_dis;
    rec.lr = lr;
    rec.time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

PretrainResult run_pretraining(const Config& cfg_in, const std::string& resume_from) {
    TrainState state = resume_from.empty() ? TrainState{} : checkpoint_load(resume_from);
    const Config& cfg = resume_from.empty() ? cfg_in : state.config;
    cfg.validate();

    const LabeledDataset data = load_dataset(cfg.get_string("data.train"), cfg.get_string("data.root"),
                                             cfg.get_int("data.image_size"));
    if (data.train_size() == 0) throw ConfigError("pretraining dataset is empty");
    const TeacherProvider<float> teacher = make_teacher_provider(cfg);
    const ClusterLayout layout = cfg.model_config().layout();
    const int teacher_dim = teacher.dim(layout);

    if (resume_from.empty()) state = init_train_state(cfg, teacher_dim);
    else if (state.teacher_dim != teacher_dim)
        throw ConfigError("resumed checkpoint teacher_dim does not match the provider");

    const LossSpec spec = cfg.loss_spec();
    const int batch = cfg.get_int("train.batch_size");
    const int epochs = cfg.get_int("train.epochs");
    const int64_t steps_per_epoch = static_cast<int64_t>(data.train_size()) / batch;
    if (steps_per_epoch == 0)
        throw ConfigError("train.batch_size (" + std::to_string(batch) + ") exceeds the dataset size (" +
                          std::to_string(data.train_size()) + ")");
    const int64_t total_steps = steps_per_epoch * epochs;
    const int64_t warmup_steps = steps_per_epoch * cfg.get_int("train.warmup_epochs");
    const double peak = cfg.get_float("train.abs_lr") > 0
                            ? cfg.get_float("train.abs_lr")
                            : cfg.get_float("train.base_lr") * batch / 256.0;
    const double min_lr = cfg.get_float("train.min_lr");
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));
    const int64_t ckpt_every = cfg.get_int("train.checkpoint_every");

    const std::string out_dir = cfg.get_string("out.dir");
    fs::create_directories(out_dir);
    const std::string metrics_path = out_dir + "/metrics.log";
    MetricsLog log(metrics_path, cfg.hash(), /*append=*/!resume_from.empty());

    PretrainResult result;
    result.metrics_path = metrics_path;
    MetricsRecord last;
    try {
        while (state.step < total_steps) {
            const int epoch = static_cast<int>(state.step / steps_per_epoch);
            const std::vector<size_t> order = epoch_order(seed, epoch, data.train_size());
            const int64_t pos = (state.step % steps_per_epoch) * batch;
            std::vector<size_t> batch_indices(order.begin() + pos, order.begin() + pos + batch);
            const double lr = lr_at(state.step, total_steps, warmup_steps, peak, min_lr);
            MetricsRecord rec = train_step(state, data, batch_indices, teacher, spec, lr);
            rec.epoch = epoch;
            log.write(rec);
            last = rec;
            if (ckpt_every > 0 && state.step % ckpt_every == 0 && state.step < total_steps)
                checkpoint_save(state, out_dir + "/checkpoint_step" + std::to_string(state.step) + ".bin");
        }
    } catch (const std::exception& e) {
        log.comment(std::string("aborted: ") + e.what());
        throw;
    }

    result.checkpoint_path = out_dir + "/checkpoint.bin";
    checkpoint_save(state, result.checkpoint_path);
    result.final_metrics = last;
    result.steps = state.step;
    return result;
}

}  // namespace digpt
