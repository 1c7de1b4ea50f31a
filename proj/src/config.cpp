#include "glyph/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "glyph/error.hpp"
#include "glyph/format.hpp"
#include "glyph/hash.hpp"
#include "glyph/utf8.hpp"
#include "glyph/version.hpp"

namespace glyph::cli {

namespace fs = std::filesystem;

char32_t parse_codepoint_literal(const std::string& text) {
    unsigned cp = 0;
    char extra = 0;
    if (std::sscanf(text.c_str(), "U+%X%c", &cp, &extra) != 1 || cp > 0x10FFFF) {
        raise(ErrorCode::InvalidValue, "expected U+XXXX, got '" + text + "'");
    }
    return static_cast<char32_t>(cp);
}

std::string codepoint_literal(char32_t cp) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "U+%04X", static_cast<unsigned>(cp));
    return buf;
}

namespace {

int64_t to_int(const std::string& field, const std::string& value) {
    try {
        size_t used = 0;
        const int64_t v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        raise(ErrorCode::InvalidValue, field + ": expected an integer, got '" + value + "'");
    }
}

double to_double(const std::string& field, const std::string& value) {
    try {
        size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        raise(ErrorCode::InvalidValue, field + ": expected a number, got '" + value + "'");
    }
}

bool to_bool(const std::string& field, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    raise(ErrorCode::InvalidValue, field + ": expected true or false, got '" + value + "'");
}

std::u32string parse_trigger_value(const std::string& value) {
    if (value.rfind("U+", 0) == 0) {
        return std::u32string(1, parse_codepoint_literal(value));
    }
    const std::u32string cps = text::decode_utf8(value);
    if (cps.empty()) {
        raise(ErrorCode::InvalidValue, "trigger must not be empty");
    }
    return cps;
}

char32_t parse_char_value(const std::string& field, const std::string& value) {
    if (value.rfind("U+", 0) == 0) return parse_codepoint_literal(value);
    const std::u32string cps = text::decode_utf8(value);
    if (cps.size() != 1) {
        raise(ErrorCode::InvalidValue, field + ": expected one character or U+XXXX");
    }
    return cps[0];
}

std::string resolve_path(const std::string& base_dir, const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    if (path.is_absolute()) return path.lexically_normal().string();
    return (fs::path(base_dir) / path).lexically_normal().string();
}

const std::set<std::string> kKnownMetrics = {"z_score",   "sim_target", "sim_clean",
                                             "sim_cross", "fid",        "zero_shot"};

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream stream(value);
    while (std::getline(stream, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

/// Fixture line lookup, 1-based, matching the numbered tables the fixtures
/// were seeded from.
std::string fixture_line(const std::string& path, int64_t index, const std::string& field) {
    if (path.empty()) {
        raise(ErrorCode::InvalidValue,
              field + ": an index reference needs the matching fixtures.* path");
    }
    const text::Corpus table = text::load_corpus(path);
    if (index < 1 || static_cast<size_t>(index) > table.size()) {
        raise(ErrorCode::InvalidValue,
              field + ": index " + std::to_string(index) + " outside fixture of " +
                  std::to_string(table.size()) + " entries");
    }
    return table.prompts[static_cast<size_t>(index - 1)];
}

struct RawBackdoor {
    std::map<std::string, std::string> fields;
};

triggers::TriggerMode parse_mode(const std::string& value) {
    if (value == "replace_all") return triggers::TriggerMode::ReplaceAllOfTarget;
    if (value == "replace_single") return triggers::TriggerMode::ReplaceSingleRandom;
    if (value == "insert") return triggers::TriggerMode::InsertBetweenWords;
    if (value == "word") return triggers::TriggerMode::WordTrigger;
    raise(ErrorCode::InvalidValue, "unknown trigger mode '" + value + "'");
}

const char* mode_name(triggers::TriggerMode mode) {
    switch (mode) {
        case triggers::TriggerMode::ReplaceAllOfTarget: return "replace_all";
        case triggers::TriggerMode::ReplaceSingleRandom: return "replace_single";
        case triggers::TriggerMode::InsertBetweenWords: return "insert";
        case triggers::TriggerMode::WordTrigger: return "word";
    }
    return "unknown";
}

triggers::AttackKind parse_kind(const std::string& value) {
    if (value == "tpa") return triggers::AttackKind::TPA;
    if (value == "taa") return triggers::AttackKind::TAA;
    if (value == "erasure") return triggers::AttackKind::Erasure;
    raise(ErrorCode::InvalidValue, "unknown attack kind '" + value + "'");
}

const char* kind_name(triggers::AttackKind kind) {
    switch (kind) {
        case triggers::AttackKind::TPA: return "tpa";
        case triggers::AttackKind::TAA: return "taa";
        case triggers::AttackKind::Erasure: return "erasure";
    }
    return "unknown";
}

}  // namespace

void ExperimentConfig::validate() const {
    if (!seed_set) {
        raise(ErrorCode::InvalidValue, "seed: required key is missing");
    }
    if (train_corpus_path.empty()) {
        raise(ErrorCode::InvalidValue, "corpus.train: required key is missing");
    }
    if (encoder.context_length < 3) {
        raise(ErrorCode::InvalidValue, "encoder.context_length must be >= 3");
    }
    if (encoder.d_model < 1 || encoder.n_heads < 1 || encoder.n_layers < 1 ||
        encoder.d_model % encoder.n_heads != 0) {
        raise(ErrorCode::InvalidValue,
              "encoder dimensions invalid (d_model must divide by n_heads)");
    }
    train.validate();
    if (pretrain.steps < 0) {
        raise(ErrorCode::InvalidValue, "teacher.pretrain_steps must be >= 0");
    }
    if (zscore.pair_budget < 1) {
        raise(ErrorCode::InvalidValue, "metrics.pair_budget must be >= 1");
    }
    for (const std::string& metric : metric_selection) {
        if (kKnownMetrics.count(metric) == 0) {
            raise(ErrorCode::InvalidValue, "unknown metric '" + metric + "'");
        }
    }
    for (const triggers::BackdoorSpec& backdoor : backdoors) backdoor.validate();
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        raise(ErrorCode::IoError, "cannot open config: " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string base_dir = fs::path(path).parent_path().string();
    return parse_config_text(buffer.str(), base_dir.empty() ? "." : base_dir);
}

ExperimentConfig parse_config_text(const std::string& content, const std::string& base_dir) {
    ExperimentConfig config;
    std::istringstream in(content);
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    std::set<std::string> seen_keys;
    std::map<int64_t, RawBackdoor> raw_backdoors;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!header_seen) {
            if (line != "GLYPHCFG 1") {
                raise(ErrorCode::VersionMismatch,
                      "config must start with 'GLYPHCFG 1', got '" + line + "'");
            }
            header_seen = true;
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        const size_t split = line.find_first_of(" \t");
        if (split == std::string::npos) {
            raise(ErrorCode::ParseError,
                  "line " + std::to_string(line_no) + ": expected 'key value'");
        }
        const std::string key = line.substr(0, split);
        std::string value = line.substr(split + 1);
        const size_t begin = value.find_first_not_of(" \t");
        const size_t end = value.find_last_not_of(" \t");
        if (begin == std::string::npos) {
            raise(ErrorCode::ParseError,
                  "line " + std::to_string(line_no) + ": key '" + key + "' has no value");
        }
        value = value.substr(begin, end - begin + 1);
        if (!seen_keys.insert(key).second) {
            raise(ErrorCode::ParseError,
                  "line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }

        if (key.rfind("backdoor.", 0) == 0) {
            const size_t dot = key.find('.', 9);
            if (dot == std::string::npos) {
                raise(ErrorCode::UnknownKey, key);
            }
            const int64_t index = to_int(key, key.substr(9, dot - 9));
            const std::string field = key.substr(dot + 1);
            static const std::set<std::string> kBackdoorFields = {
                "id",           "kind",
                "mode",         "trigger",
                "target_char",  "target_prompt",
                "target_prompt_index", "target_attribute",
                "target_attribute_index"};
            if (kBackdoorFields.count(field) == 0) {
                raise(ErrorCode::UnknownKey, key);
            }
            raw_backdoors[index].fields[field] = value;
            continue;
        }

        if (key == "seed") {
            config.seed = static_cast<uint64_t>(to_int(key, value));
            config.seed_set = true;
        } else if (key == "output_dir") {
            config.output_dir = value;
        } else if (key == "corpus.train") {
            config.train_corpus_path = resolve_path(base_dir, value);
        } else if (key == "corpus.eval") {
            config.eval_corpus_path = resolve_path(base_dir, value);
        } else if (key == "fixtures.homoglyphs") {
            config.fixtures.homoglyphs = resolve_path(base_dir, value);
        } else if (key == "fixtures.target_prompts") {
            config.fixtures.target_prompts = resolve_path(base_dir, value);
        } else if (key == "fixtures.target_attributes") {
            config.fixtures.target_attributes = resolve_path(base_dir, value);
        } else if (key == "extra_codepoints") {
            for (const std::string& item : split_list(value)) {
                config.extra_codepoints.push_back(parse_codepoint_literal(item));
            }
        } else if (key == "encoder.context_length") {
            config.encoder.context_length = static_cast<int>(to_int(key, value));
        } else if (key == "encoder.d_model") {
            config.encoder.d_model = static_cast<int>(to_int(key, value));
        } else if (key == "encoder.n_heads") {
            config.encoder.n_heads = static_cast<int>(to_int(key, value));
        } else if (key == "encoder.n_layers") {
            config.encoder.n_layers = static_cast<int>(to_int(key, value));
        } else if (key == "encoder.embedding_view") {
            config.encoder.embedding_view = model::parse_embedding_view(value);
        } else if (key == "encoder.seed") {
            config.encoder.seed = static_cast<uint32_t>(to_int(key, value));
            config.encoder_seed_set = true;
        } else if (key == "teacher.checkpoint") {
            config.teacher_checkpoint = resolve_path(base_dir, value);
        } else if (key == "teacher.pretrain_steps") {
            config.pretrain.steps = static_cast<int>(to_int(key, value));
        } else if (key == "teacher.pretrain_batch") {
            config.pretrain.batch_size = static_cast<int>(to_int(key, value));
        } else if (key == "teacher.pretrain_lr") {
            config.pretrain.lr = to_double(key, value);
        } else if (key == "teacher.pretrain_temperature") {
            config.pretrain.temperature = to_double(key, value);
        } else if (key == "train.beta") {
            config.train.beta = to_double(key, value);
            if (config.train.beta < 0.0) {
                raise(ErrorCode::InvalidValue, "train.beta must be >= 0");
            }
        } else if (key == "train.lr") {
            config.train.lr = to_double(key, value);
        } else if (key == "train.lr_decay_factor") {
            config.train.lr_decay_factor = to_double(key, value);
        } else if (key == "train.decay_epoch") {
            config.train.decay_epoch = static_cast<int>(to_int(key, value));
        } else if (key == "train.epochs") {
            config.train.epochs = static_cast<int>(to_int(key, value));
        } else if (key == "train.total_steps") {
            config.train.total_steps = static_cast<int>(to_int(key, value));
        } else if (key == "train.clean_batch_size") {
            config.train.clean_batch_size = static_cast<int>(to_int(key, value));
        } else if (key == "train.poisoned_per_backdoor") {
            config.train.poisoned_per_backdoor = static_cast<int>(to_int(key, value));
        } else if (key == "train.distance") {
            config.train.distance.kind = train::parse_distance_kind(value);
        } else if (key == "train.poincare_epsilon") {
            config.train.distance.poincare_epsilon = to_double(key, value);
        } else if (key == "train.weight_decay") {
            config.train.optimizer.weight_decay = to_double(key, value);
        } else if (key == "train.adam_beta1") {
            config.train.optimizer.beta1 = to_double(key, value);
        } else if (key == "train.adam_beta2") {
            config.train.optimizer.beta2 = to_double(key, value);
        } else if (key == "train.adam_eps") {
            config.train.optimizer.eps = to_double(key, value);
        } else if (key == "metrics") {
            config.metric_selection.clear();
            for (const std::string& metric : split_list(value)) {
                if (kKnownMetrics.count(metric) == 0) {
                    raise(ErrorCode::InvalidValue, "unknown metric '" + metric + "'");
                }
                config.metric_selection.insert(metric);
            }
        } else if (key == "metrics.pair_budget") {
            config.zscore.pair_budget = to_int(key, value);
        } else if (key == "metrics.divide_by_std") {
            config.zscore.divide_by_std = to_bool(key, value);
        } else if (key == "zero_shot.classes") {
            config.zero_shot.classes_path = resolve_path(base_dir, value);
        } else if (key == "zero_shot.queries") {
            config.zero_shot.queries_path = resolve_path(base_dir, value);
        } else {
            raise(ErrorCode::UnknownKey, key);
        }
    }
    if (!header_seen) {
        raise(ErrorCode::VersionMismatch, "empty config (missing GLYPHCFG header)");
    }

    // Assemble backdoors in index order; indices must be 0..k-1.
    int64_t expected = 0;
    for (const auto& [index, raw] : raw_backdoors) {
        if (index != expected++) {
            raise(ErrorCode::InvalidValue,
                  "backdoor indices must be contiguous from 0; missing backdoor." +
                      std::to_string(expected - 1));
        }
        triggers::BackdoorSpec spec;
        auto get = [&raw](const char* field) -> const std::string* {
            auto it = raw.fields.find(field);
            return it == raw.fields.end() ? nullptr : &it->second;
        };
        const std::string prefix = "backdoor." + std::to_string(index) + ".";
        spec.id = get("id") ? *get("id") : "backdoor" + std::to_string(index);
        if (!get("kind")) {
            raise(ErrorCode::InvalidValue, prefix + "kind is required");
        }
        spec.kind = parse_kind(*get("kind"));
        switch (spec.kind) {
            case triggers::AttackKind::TPA:
                spec.trigger.mode = triggers::TriggerMode::ReplaceAllOfTarget;
                break;
            case triggers::AttackKind::TAA:
                spec.trigger.mode = triggers::TriggerMode::ReplaceSingleRandom;
                break;
            case triggers::AttackKind::Erasure:
                spec.trigger.mode = triggers::TriggerMode::WordTrigger;
                break;
        }
        if (get("mode")) spec.trigger.mode = parse_mode(*get("mode"));
        if (!get("trigger")) {
            raise(ErrorCode::InvalidValue, prefix + "trigger is required");
        }
        spec.trigger.trigger_text = parse_trigger_value(*get("trigger"));
        if (get("target_char")) {
            spec.trigger.target_char =
                parse_char_value(prefix + "target_char", *get("target_char"));
        }
        if (get("target_prompt") && get("target_prompt_index")) {
            raise(ErrorCode::InvalidValue,
                  prefix + "target_prompt and target_prompt_index are exclusive");
        }
        if (get("target_prompt")) spec.target_prompt = *get("target_prompt");
        if (get("target_prompt_index")) {
            spec.target_prompt = fixture_line(
                config.fixtures.target_prompts,
                to_int(prefix + "target_prompt_index", *get("target_prompt_index")),
                prefix + "target_prompt_index");
        }
        if (get("target_attribute") && get("target_attribute_index")) {
            raise(ErrorCode::InvalidValue,
                  prefix + "target_attribute and target_attribute_index are exclusive");
        }
        if (get("target_attribute")) spec.target_attribute = *get("target_attribute");
        if (get("target_attribute_index")) {
            spec.target_attribute = fixture_line(
                config.fixtures.target_attributes,
                to_int(prefix + "target_attribute_index", *get("target_attribute_index")),
                prefix + "target_attribute_index");
        }
        config.backdoors.push_back(std::move(spec));
    }

    config.validate();
    return config;
}

std::string emit_config(const ExperimentConfig& config) {
    std::ostringstream out;
    out << "GLYPHCFG " << kConfigFormatVersion << "\n";
    out << "seed " << config.seed << "\n";
    out << "output_dir " << config.output_dir << "\n";
    out << "corpus.train " << config.train_corpus_path << "\n";
    if (!config.eval_corpus_path.empty()) {
        out << "corpus.eval " << config.eval_corpus_path << "\n";
    }
    if (!config.fixtures.homoglyphs.empty()) {
        out << "fixtures.homoglyphs " << config.fixtures.homoglyphs << "\n";
    }
    if (!config.fixtures.target_prompts.empty()) {
        out << "fixtures.target_prompts " << config.fixtures.target_prompts << "\n";
    }
    if (!config.fixtures.target_attributes.empty()) {
        out << "fixtures.target_attributes " << config.fixtures.target_attributes << "\n";
    }
    if (!config.extra_codepoints.empty()) {
        out << "extra_codepoints ";
        for (size_t i = 0; i < config.extra_codepoints.size(); ++i) {
            if (i) out << ',';
            out << codepoint_literal(config.extra_codepoints[i]);
        }
        out << "\n";
    }
    out << "encoder.context_length " << config.encoder.context_length << "\n";
    out << "encoder.d_model " << config.encoder.d_model << "\n";
    out << "encoder.n_heads " << config.encoder.n_heads << "\n";
    out << "encoder.n_layers " << config.encoder.n_layers << "\n";
    out << "encoder.embedding_view "
        << model::embedding_view_name(config.encoder.embedding_view) << "\n";
    if (config.encoder_seed_set) {
        out << "encoder.seed " << config.encoder.seed << "\n";
    }
    if (!config.teacher_checkpoint.empty()) {
        out << "teacher.checkpoint " << config.teacher_checkpoint << "\n";
    }
    out << "teacher.pretrain_steps " << config.pretrain.steps << "\n";
    out << "teacher.pretrain_batch " << config.pretrain.batch_size << "\n";
    out << "teacher.pretrain_lr " << format_double(config.pretrain.lr) << "\n";
    out << "teacher.pretrain_temperature " << format_double(config.pretrain.temperature)
        << "\n";
    out << "train.beta " << format_double(config.train.beta) << "\n";
    out << "train.lr " << format_double(config.train.lr) << "\n";
    out << "train.lr_decay_factor " << format_double(config.train.lr_decay_factor) << "\n";
    out << "train.decay_epoch " << config.train.decay_epoch << "\n";
    out << "train.epochs " << config.train.epochs << "\n";
    out << "train.total_steps " << config.train.total_steps << "\n";
    out << "train.clean_batch_size " << config.train.clean_batch_size << "\n";
    out << "train.poisoned_per_backdoor " << config.train.poisoned_per_backdoor << "\n";
    out << "train.distance " << train::distance_kind_name(config.train.distance.kind)
        << "\n";
    out << "train.poincare_epsilon "
        << format_double(config.train.distance.poincare_epsilon) << "\n";
    out << "train.weight_decay " << format_double(config.train.optimizer.weight_decay)
        << "\n";
    out << "train.adam_beta1 " << format_double(config.train.optimizer.beta1) << "\n";
    out << "train.adam_beta2 " << format_double(config.train.optimizer.beta2) << "\n";
    out << "train.adam_eps " << format_double(config.train.optimizer.eps) << "\n";
    out << "metrics ";
    {
        // Canonical order.
        static const char* kOrder[] = {"z_score",   "sim_target", "sim_clean",
                                       "sim_cross", "fid",        "zero_shot"};
        bool first = true;
        for (const char* name : kOrder) {
            if (config.metric_selection.count(name)) {
                if (!first) out << ',';
                out << name;
                first = false;
            }
        }
        out << "\n";
    }
    out << "metrics.pair_budget " << config.zscore.pair_budget << "\n";
    out << "metrics.divide_by_std " << (config.zscore.divide_by_std ? "true" : "false")
        << "\n";
    if (!config.zero_shot.classes_path.empty()) {
        out << "zero_shot.classes " << config.zero_shot.classes_path << "\n";
    }
    if (!config.zero_shot.queries_path.empty()) {
        out << "zero_shot.queries " << config.zero_shot.queries_path << "\n";
    }
    for (size_t i = 0; i < config.backdoors.size(); ++i) {
        const triggers::BackdoorSpec& spec = config.backdoors[i];
        const std::string prefix = "backdoor." + std::to_string(i) + ".";
        out << prefix << "id " << spec.id << "\n";
        out << prefix << "kind " << kind_name(spec.kind) << "\n";
        out << prefix << "mode " << mode_name(spec.trigger.mode) << "\n";
        if (spec.trigger.trigger_text.size() == 1) {
            out << prefix << "trigger " << codepoint_literal(spec.trigger.trigger_text[0])
                << "\n";
        } else {
            out << prefix << "trigger " << spec.trigger.trigger_utf8() << "\n";
        }
        if (spec.trigger.target_char != 0) {
            out << prefix << "target_char " << codepoint_literal(spec.trigger.target_char)
                << "\n";
        }
        if (!spec.target_prompt.empty()) {
            out << prefix << "target_prompt " << spec.target_prompt << "\n";
        }
        if (!spec.target_attribute.empty()) {
            out << prefix << "target_attribute " << spec.target_attribute << "\n";
        }
    }
    return out.str();
}

std::string config_hash(const ExperimentConfig& config) {
    std::istringstream in(emit_config(config));
    std::string line, hashed;
    while (std::getline(in, line)) {
        if (line.rfind("output_dir ", 0) == 0) continue;
        hashed += line;
        hashed += '\n';
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(hash::fnv1a64(hashed)));
    return buf;
}

}  // namespace glyph::cli
