#include "glyph/experiment.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "glyph/error.hpp"
#include "glyph/format.hpp"
#include "glyph/hash.hpp"
#include "glyph/metrics.hpp"
#include "glyph/utf8.hpp"
#include "glyph/version.hpp"

namespace glyph::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string iso_utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::string file_crc_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        raise(ErrorCode::IoError, "cannot hash artifact: " + path);
    }
    hash::Crc32 crc;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        crc.update(buf, static_cast<size_t>(in.gcount()));
        if (in.eof()) break;
    }
    char hex[16];
    std::snprintf(hex, sizeof(hex), "%08x", crc.finish());
    return hex;
}

/// Collects artifacts as they are produced so a failed run can still emit an
/// incomplete manifest listing what exists.
class ManifestBuilder {
public:
    ManifestBuilder(const ExperimentConfig& config)
        : out_dir_(config.output_dir) {
        manifest_.config_hash = config_hash(config);
        manifest_.tool_version = kToolVersion;
        manifest_.started_at = iso_utc_now();
        t0_ = std::chrono::steady_clock::now();
        fs::create_directories(out_dir_);
    }

    std::string path_of(const std::string& name) const {
        return (fs::path(out_dir_) / name).string();
    }

    void record(const std::string& name) {
        manifest_.artifacts.push_back({name, file_crc_hex(path_of(name))});
    }

    RunManifest finalize(bool complete) {
        manifest_.complete = complete;
        manifest_.finished_at = iso_utc_now();
        manifest_.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        write_manifest(manifest_, path_of("manifest.json"));
        return manifest_;
    }

private:
    std::string out_dir_;
    RunManifest manifest_;
    std::chrono::steady_clock::time_point t0_;
};

void write_train_report_jsonl(const train::TrainReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        raise(ErrorCode::IoError, "cannot open train report for writing: " + path);
    }
    for (const train::StepRecord& rec : report.steps) {
        out << "{\"step\":" << rec.step << ",\"u\":" << format_double(rec.utility)
            << ",\"b\":[";
        for (size_t i = 0; i < rec.backdoor.size(); ++i) {
            if (i) out << ',';
            out << format_double(rec.backdoor[i]);
        }
        out << "],\"total\":" << format_double(rec.total)
            << ",\"lr\":" << format_double(rec.lr) << "}\n";
    }
}

metrics::EmbeddingSet embed_corpus_pooled(const model::Embedder& embedder,
                                          const text::Corpus& corpus) {
    metrics::EmbeddingSet set;
    set.vectors.reserve(corpus.size());
    for (const std::string& prompt : corpus.prompts) {
        set.vectors.push_back(embedder.embed_pooled(prompt));
    }
    return set;
}

/// Metrics for one encoder under evaluation ("subject"), measured against the
/// frozen teacher.
metrics::MetricsReport evaluate_encoder(const ExperimentConfig& config,
                                        const model::TextEncoder& teacher,
                                        const model::TextEncoder& subject,
                                        const text::Corpus& eval_corpus,
                                        const text::Vocab& vocab) {
    const model::EmbeddingView view = config.encoder.embedding_view;
    const model::Embedder teacher_embed{&teacher, &vocab, view};
    const model::Embedder subject_embed{&subject, &vocab, view};
    const auto& selected = config.metric_selection;

    metrics::MetricsReport report;
    report.config_hash = config_hash(config);
    report.n_prompts = static_cast<int64_t>(eval_corpus.size());

    if (selected.count("sim_clean")) {
        report.sim_clean = metrics::sim_clean(teacher_embed, subject_embed, eval_corpus);
    }

    double z_sum = 0.0, t_sum = 0.0;
    int z_count = 0, t_count = 0;
    for (const triggers::BackdoorSpec& backdoor : config.backdoors) {
        metrics::BackdoorMetrics entry;
        entry.id = backdoor.id;
        if (selected.count("sim_target")) {
            entry.sim_target = metrics::sim_target(teacher_embed, subject_embed,
                                                   eval_corpus, backdoor, config.seed);
            t_sum += *entry.sim_target;
            ++t_count;
        }
        // The pairwise separation statistic applies to target-prompt
        // backdoors with replace-mode triggers only.
        const bool replace_mode =
            backdoor.trigger.mode == triggers::TriggerMode::ReplaceAllOfTarget ||
            backdoor.trigger.mode == triggers::TriggerMode::ReplaceSingleRandom;
        if (selected.count("z_score") && backdoor.kind == triggers::AttackKind::TPA &&
            replace_mode) {
            const text::Corpus filtered =
                text::filter_corpus(eval_corpus, backdoor.trigger.target_char);
            if (filtered.size() >= 2) {
                metrics::ZScoreOptions options = config.zscore;
                options.seed = rng::derive_seed(config.seed, "zscore-pairs");
                entry.z_score =
                    metrics::z_score(subject_embed, filtered, backdoor.trigger,
                                     rng::derive_seed(config.seed, "zscore-eval"), options);
                z_sum += *entry.z_score;
                ++z_count;
                const int64_t all_pairs =
                    static_cast<int64_t>(filtered.size()) *
                    static_cast<int64_t>(filtered.size() - 1) / 2;
                report.n_pairs += std::min(all_pairs, config.zscore.pair_budget);
            }
        }
        report.per_backdoor.push_back(std::move(entry));
    }
    if (z_count > 0) report.z_score = z_sum / z_count;
    if (t_count > 0) report.sim_target = t_sum / t_count;

    if (selected.count("fid")) {
        // Population-shift reading at desk scale: Gaussian fit of teacher
        // pooled embeddings vs the subject's, over the same clean prompts.
        const metrics::EmbeddingSet real = embed_corpus_pooled(teacher_embed, eval_corpus);
        const metrics::EmbeddingSet gen = embed_corpus_pooled(subject_embed, eval_corpus);
        report.fid = metrics::fid(real, gen).value;
    }

    if (selected.count("zero_shot") && !config.zero_shot.classes_path.empty() &&
        !config.zero_shot.queries_path.empty()) {
        const text::Corpus class_prompts = text::load_corpus(config.zero_shot.classes_path);
        metrics::EmbeddingSet classes;
        for (const std::string& prompt : class_prompts.prompts) {
            classes.vectors.push_back(subject_embed.embed(prompt));
        }
        metrics::EmbeddingSet queries;
        std::ifstream in(config.zero_shot.queries_path, std::ios::binary);
        if (!in) {
            raise(ErrorCode::IoError,
                  "cannot open zero-shot queries: " + config.zero_shot.queries_path);
        }
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const size_t tab = line.find('\t');
            if (tab == std::string::npos) {
                raise(ErrorCode::ParseError,
                      "zero-shot query lines must be 'label<TAB>prompt'");
            }
            queries.labels.push_back(static_cast<int>(std::stol(line.substr(0, tab))));
            queries.vectors.push_back(subject_embed.embed(line.substr(tab + 1)));
        }
        const metrics::ZeroShotResult zs = metrics::zero_shot_classify(queries, classes);
        report.acc_at_1 = zs.acc_at_1;
        report.acc_at_5 = zs.acc_at_5;
    }
    return report;
}

}  // namespace

void write_manifest(const RunManifest& manifest, const std::string& path) {
    json doc;
    doc["config_hash"] = manifest.config_hash;
    doc["tool_version"] = manifest.tool_version;
    doc["started_at"] = manifest.started_at;
    doc["finished_at"] = manifest.finished_at;
    doc["wall_clock_seconds"] = manifest.wall_clock_seconds;
    doc["complete"] = manifest.complete;
    doc["artifacts"] = json::array();
    for (const ArtifactRecord& a : manifest.artifacts) {
        doc["artifacts"].push_back({{"path", a.path}, {"crc32", a.crc32_hex}});
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        raise(ErrorCode::IoError, "cannot open manifest for writing: " + path);
    }
    out << doc.dump(2) << "\n";
}

RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        raise(ErrorCode::IoError, "cannot open manifest: " + path);
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        raise(ErrorCode::ParseError, std::string("manifest: ") + e.what());
    }
    RunManifest manifest;
    manifest.config_hash = doc.value("config_hash", "");
    manifest.tool_version = doc.value("tool_version", "");
    manifest.started_at = doc.value("started_at", "");
    manifest.finished_at = doc.value("finished_at", "");
    manifest.wall_clock_seconds = doc.value("wall_clock_seconds", 0.0);
    manifest.complete = doc.value("complete", false);
    for (const auto& item : doc.value("artifacts", json::array())) {
        manifest.artifacts.push_back(
            {item.value("path", ""), item.value("crc32", "")});
    }
    return manifest;
}

text::Vocab build_run_vocab(const ExperimentConfig& config, const text::Corpus& corpus) {
    std::set<char32_t> extras(config.extra_codepoints.begin(),
                              config.extra_codepoints.end());
    for (const triggers::BackdoorSpec& backdoor : config.backdoors) {
        for (char32_t cp : backdoor.trigger.trigger_text) extras.insert(cp);
        for (char32_t cp : text::fold_case(text::decode_utf8(backdoor.target_prompt))) {
            extras.insert(cp);
        }
        for (char32_t cp : text::fold_case(text::decode_utf8(backdoor.target_attribute))) {
            extras.insert(cp);
        }
    }
    return text::build_vocab(corpus, {extras.begin(), extras.end()});
}

model::TextEncoder derive_teacher(const ExperimentConfig& config,
                                  const text::Corpus& corpus, const text::Vocab& vocab) {
    if (!config.teacher_checkpoint.empty()) {
        model::TextEncoder teacher =
            model::TextEncoder::load_checkpoint(config.teacher_checkpoint);
        if (teacher.config().vocab_size != vocab.size) {
            raise(ErrorCode::VocabMismatch,
                  "teacher checkpoint was built for a vocabulary of " +
                      std::to_string(teacher.config().vocab_size) +
                      " ids, this run derives " + std::to_string(vocab.size));
        }
        return teacher;
    }
    model::EncoderConfig enc_config = config.encoder;
    enc_config.vocab_size = vocab.size;
    if (!config.encoder_seed_set) {
        enc_config.seed = static_cast<uint32_t>(rng::derive_seed(config.seed, "encoder"));
    }
    model::TextEncoder teacher = model::TextEncoder::init(enc_config);
    if (config.pretrain.steps > 0) {
        model::PretrainConfig pc = config.pretrain;
        pc.seed = config.seed;
        teacher = model::pretrain_teacher(std::move(teacher), corpus, vocab, pc);
    }
    return teacher;
}

RunManifest run_experiment(const ExperimentConfig& config) {
    config.validate();
    ManifestBuilder builder(config);
    try {
        const text::Corpus train_corpus = text::load_corpus(config.train_corpus_path);
        const text::Corpus eval_corpus = config.eval_corpus_path.empty()
                                             ? train_corpus
                                             : text::load_corpus(config.eval_corpus_path);
        const text::Vocab vocab = build_run_vocab(config, train_corpus);
        triggers::validate_backdoor_set(config.backdoors, vocab,
                                        config.encoder.context_length);

        // Echo the fully-resolved config (with the derived encoder seed).
        ExperimentConfig resolved = config;
        resolved.encoder.vocab_size = vocab.size;
        if (!resolved.encoder_seed_set) {
            resolved.encoder.seed =
                static_cast<uint32_t>(rng::derive_seed(config.seed, "encoder"));
            resolved.encoder_seed_set = true;
        }
        {
            std::ofstream out(builder.path_of("resolved_config.txt"),
                              std::ios::binary | std::ios::trunc);
            out << emit_config(resolved);
        }
        builder.record("resolved_config.txt");
        text::save_vocab(vocab, builder.path_of("vocab.txt"));
        builder.record("vocab.txt");

        model::TextEncoder teacher = derive_teacher(config, train_corpus, vocab);
        teacher.role = model::Role::Teacher;
        teacher.save_checkpoint(builder.path_of("teacher.ckpt"));
        builder.record("teacher.ckpt");

        model::TextEncoder student = teacher;
        student.role = model::Role::Student;

        train::TrainConfig train_config = config.train;
        train_config.seed = config.seed;
        train_config.embedding_view = config.encoder.embedding_view;
        train::TrainReport train_report = train_injection(
            teacher, student, train_corpus, config.backdoors, vocab, train_config);
        train_report.checkpoint_path = "student.ckpt";

        student.save_checkpoint(builder.path_of("student.ckpt"));
        builder.record("student.ckpt");
        write_train_report_jsonl(train_report, builder.path_of("train_report.jsonl"));
        builder.record("train_report.jsonl");

        const metrics::MetricsReport student_metrics =
            evaluate_encoder(config, teacher, student, eval_corpus, vocab);
        metrics::write_metrics_report(student_metrics,
                                      builder.path_of("metrics_student.txt"));
        builder.record("metrics_student.txt");

        const metrics::MetricsReport teacher_metrics =
            evaluate_encoder(config, teacher, teacher, eval_corpus, vocab);
        metrics::write_metrics_report(teacher_metrics,
                                      builder.path_of("metrics_teacher.txt"));
        builder.record("metrics_teacher.txt");

        return builder.finalize(true);
    } catch (...) {
        builder.finalize(false);
        throw;
    }
}

RunManifest run_evaluation(const ExperimentConfig& config,
                           const std::string& student_checkpoint) {
    config.validate();
    ManifestBuilder builder(config);
    try {
        const text::Corpus train_corpus = text::load_corpus(config.train_corpus_path);
        const text::Corpus eval_corpus = config.eval_corpus_path.empty()
                                             ? train_corpus
                                             : text::load_corpus(config.eval_corpus_path);
        const text::Vocab vocab = build_run_vocab(config, train_corpus);
        model::TextEncoder teacher = derive_teacher(config, train_corpus, vocab);
        model::TextEncoder student = model::TextEncoder::load_checkpoint(student_checkpoint);
        if (student.config().vocab_size != vocab.size) {
            raise(ErrorCode::VocabMismatch,
                  "student checkpoint vocabulary does not match this run");
        }
        const metrics::MetricsReport student_metrics =
            evaluate_encoder(config, teacher, student, eval_corpus, vocab);
        metrics::write_metrics_report(student_metrics,
                                      builder.path_of("metrics_student.txt"));
        builder.record("metrics_student.txt");
        const metrics::MetricsReport teacher_metrics =
            evaluate_encoder(config, teacher, teacher, eval_corpus, vocab);
        metrics::write_metrics_report(teacher_metrics,
                                      builder.path_of("metrics_teacher.txt"));
        builder.record("metrics_teacher.txt");
        return builder.finalize(true);
    } catch (...) {
        builder.finalize(false);
        throw;
    }
}

RunManifest run_pretrain(const ExperimentConfig& config) {
    config.validate();
    ManifestBuilder builder(config);
    try {
        const text::Corpus corpus = text::load_corpus(config.train_corpus_path);
        const text::Vocab vocab = build_run_vocab(config, corpus);
        text::save_vocab(vocab, builder.path_of("vocab.txt"));
        builder.record("vocab.txt");
        const model::TextEncoder teacher = derive_teacher(config, corpus, vocab);
        teacher.save_checkpoint(builder.path_of("teacher.ckpt"));
        builder.record("teacher.ckpt");
        return builder.finalize(true);
    } catch (...) {
        builder.finalize(false);
        throw;
    }
}

}  // namespace glyph::cli
