#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "glyph/encoder.hpp"
#include "glyph/injection.hpp"
#include "glyph/metrics.hpp"
#include "glyph/triggers.hpp"

namespace glyph::cli {

struct FixturePaths {
    std::string homoglyphs;
    std::string target_prompts;
    std::string target_attributes;
};

struct ZeroShotInputs {
    std::string classes_path;  // one class prompt per line
    std::string queries_path;  // lines "label<TAB>prompt"
};

/// Fully resolved experiment description. parse_config() fills defaults for
/// omitted optional keys and rejects unknown keys outright; emit_config()
/// renders the canonical resolved form whose re-parse yields the same config.
struct ExperimentConfig {
    uint64_t seed = 0;
    bool seed_set = false;
    std::string output_dir = "runs/out";
    std::string train_corpus_path;
    std::string eval_corpus_path;  // empty: evaluate on the training corpus
    FixturePaths fixtures;
    std::vector<char32_t> extra_codepoints;

    model::EncoderConfig encoder;  // vocab_size filled at run time
    bool encoder_seed_set = false;

    std::string teacher_checkpoint;  // empty: derive the teacher
    model::PretrainConfig pretrain;  // steps == 0: seeded random-init teacher

    train::TrainConfig train;

    std::set<std::string> metric_selection = {"z_score", "sim_target", "sim_clean", "fid"};
    metrics::ZScoreOptions zscore;
    ZeroShotInputs zero_shot;

    std::vector<triggers::BackdoorSpec> backdoors;

    void validate() const;
};

/// Strict parser for the GLYPHCFG 1 key-value format. Relative paths resolve
/// against the config file's directory.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& base_dir);

/// Canonical resolved form: every key emitted with its final value.
std::string emit_config(const ExperimentConfig& config);

/// Hash of the canonical form minus the output_dir line, so runs that differ
/// only in destination produce identical checkpoints and reports.
std::string config_hash(const ExperimentConfig& config);

/// "U+XXXX" -> codepoint (InvalidValue on malformed input).
char32_t parse_codepoint_literal(const std::string& text);
std::string codepoint_literal(char32_t cp);

}  // namespace glyph::cli
