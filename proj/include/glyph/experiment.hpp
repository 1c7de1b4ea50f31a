#pragma once

#include <string>
#include <vector>

#include "glyph/config.hpp"

namespace glyph::cli {

struct ArtifactRecord {
    std::string path;       // relative to the output directory
    std::string crc32_hex;  // content hash, recomputed by integrity checks
};

struct RunManifest {
    std::string config_hash;
    std::string tool_version;
    std::string started_at;   // ISO-8601 UTC
    std::string finished_at;
    double wall_clock_seconds = 0.0;
    bool complete = false;
    std::vector<ArtifactRecord> artifacts;
};

void write_manifest(const RunManifest& manifest, const std::string& path);
RunManifest read_manifest(const std::string& path);

/// Deterministic vocabulary for a run: the training corpus plus trigger
/// codepoints, case-folded target prompt / attribute codepoints, and any
/// configured extras.
text::Vocab build_run_vocab(const ExperimentConfig& config, const text::Corpus& corpus);

/// Teacher per the config: loaded from a checkpoint when given, otherwise a
/// seeded init optionally followed by the contrastive warm-up.
model::TextEncoder derive_teacher(const ExperimentConfig& config,
                                  const text::Corpus& corpus, const text::Vocab& vocab);

/// Full injection experiment: derive teacher, clone student, train, evaluate
/// both encoders, and write checkpoints, reports, the resolved config and the
/// manifest under config.output_dir. Partial outputs are flagged incomplete.
RunManifest run_experiment(const ExperimentConfig& config);

/// Evaluation of an existing student checkpoint against the config's teacher.
RunManifest run_evaluation(const ExperimentConfig& config,
                           const std::string& student_checkpoint);

/// Teacher derivation alone (the `pretrain` subcommand).
RunManifest run_pretrain(const ExperimentConfig& config);

}  // namespace glyph::cli
