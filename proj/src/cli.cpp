#include "glyph/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"

#include "glyph/config.hpp"
#include "glyph/error.hpp"
#include "glyph/experiment.hpp"
#include "glyph/metrics.hpp"
#include "glyph/triggers.hpp"
#include "glyph/version.hpp"

namespace glyph::cli {

namespace {

std::string version_string() {
    std::ostringstream out;
    out << "glyph " << kToolVersion << " (formats: vocab " << kVocabFormatVersion
        << ", cfg " << kConfigFormatVersion << ", checkpoint " << kCheckpointVersion
        << ", homoglyphs " << kHomoglyphFormatVersion << ", report "
        << kReportFormatVersion << ")";
    return out.str();
}

std::set<std::string> parse_script_list(const std::string& csv) {
    static const std::map<std::string, std::string> kNames = {
        {"latin", "Latin"},     {"common", "Common"},   {"greek", "Greek"},
        {"cyrillic", "Cyrillic"}, {"armenian", "Armenian"}, {"arabic", "Arabic"},
        {"bengali", "Bengali"}, {"oriya", "Oriya"},     {"hangul", "Hangul"},
        {"osmanya", "Osmanya"}, {"emoji", "Emoji"},     {"unknown", "Unknown"},
    };
    std::set<std::string> out;
    std::istringstream stream(csv);
    std::string item;
    while (std::getline(stream, item, ',')) {
        if (item.empty()) continue;
        std::string lower;
        for (char c : item) lower.push_back(static_cast<char>(std::tolower(c)));
        auto it = kNames.find(lower);
        if (it == kNames.end()) {
            raise(ErrorCode::InvalidValue, "unknown script '" + item + "'");
        }
        out.insert(it->second);
    }
    if (out.empty()) {
        raise(ErrorCode::InvalidValue, "--allow-scripts needs at least one script");
    }
    return out;
}

int cmd_vocab_build(const std::string& corpus_path, const std::string& out_path,
                    const std::string& extra_csv, const std::string& homoglyph_path) {
    const text::Corpus corpus = text::load_corpus(corpus_path);
    std::vector<char32_t> extras;
    if (!extra_csv.empty()) {
        std::istringstream stream(extra_csv);
        std::string item;
        while (std::getline(stream, item, ',')) {
            if (!item.empty()) extras.push_back(parse_codepoint_literal(item));
        }
    }
    if (!homoglyph_path.empty()) {
        const triggers::HomoglyphTable table = triggers::load_homoglyph_table(homoglyph_path);
        for (const auto& [latin, entries] : table.by_latin) {
            extras.push_back(latin);
            for (const triggers::HomoglyphEntry& entry : entries) {
                extras.push_back(entry.codepoint);
            }
        }
    }
    const text::Vocab vocab = text::build_vocab(corpus, extras);
    text::save_vocab(vocab, out_path);
    std::cout << "wrote " << out_path << " (" << vocab.size << " ids)\n";
    return 0;
}

int cmd_scan(const std::string& input_path, const std::string& scripts_csv) {
    const std::set<std::string> allowed =
        scripts_csv.empty() ? triggers::default_allowed_scripts()
                            : parse_script_list(scripts_csv);
    std::ifstream in(input_path, std::ios::binary);
    if (!in) {
        raise(ErrorCode::IoError, "cannot open input: " + input_path);
    }
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        for (const triggers::ScanFinding& finding : triggers::scan_prompt(line, allowed)) {
            std::cout << finding.offset << '\t' << codepoint_literal(finding.codepoint)
                      << '\t' << finding.script << '\n';
        }
    }
    return 0;
}

void print_report_file(const std::string& label, const std::string& path) {
    std::cout << label << ":\n";
    for (const auto& [key, value] : metrics::read_report_fields(path)) {
        std::cout << "  " << key << " = " << value << "\n";
    }
}

int cmd_report(const std::string& run_dir) {
    const RunManifest manifest = read_manifest(run_dir + "/manifest.json");
    std::cout << "run " << run_dir << "\n";
    std::cout << "  config_hash  " << manifest.config_hash << "\n";
    std::cout << "  tool_version " << manifest.tool_version << "\n";
    std::cout << "  started_at   " << manifest.started_at << "\n";
    std::cout << "  finished_at  " << manifest.finished_at << "\n";
    std::cout << "  complete     " << (manifest.complete ? "true" : "false") << "\n";
    std::cout << "  artifacts:\n";
    for (const ArtifactRecord& artifact : manifest.artifacts) {
        std::cout << "    " << artifact.path << " crc32=" << artifact.crc32_hex << "\n";
    }
    for (const char* name : {"metrics_teacher.txt", "metrics_student.txt"}) {
        const std::string path = run_dir + "/" + name;
        if (std::ifstream(path).good()) print_report_file(name, path);
    }
    return 0;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
    CLI::App app{"backdoor injection, evaluation and trigger scanning for small "
                 "transformer text encoders"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(0, 1);

    // vocab build
    CLI::App* vocab = app.add_subcommand("vocab", "vocabulary utilities");
    CLI::App* vocab_build = vocab->add_subcommand("build", "build a vocabulary file");
    std::string vb_corpus, vb_out, vb_extra, vb_homoglyphs;
    vocab_build->add_option("--corpus", vb_corpus, "corpus file, one prompt per line")
        ->required();
    vocab_build->add_option("--out", vb_out, "output vocab path")->required();
    vocab_build->add_option("--extra", vb_extra, "extra codepoints, e.g. U+043E,U+03BF");
    vocab_build->add_option("--homoglyphs", vb_homoglyphs,
                            "homoglyph table whose entries are all registered");

    // pretrain / inject / eval
    std::string pt_config, in_config, ev_config, ev_student, out_override;
    CLI::App* pretrain = app.add_subcommand("pretrain", "derive and save the teacher");
    pretrain->add_option("--config", pt_config, "experiment config")->required();
    pretrain->add_option("--out", out_override, "override output_dir");

    CLI::App* inject = app.add_subcommand("inject", "run a backdoor injection experiment");
    inject->add_option("--config", in_config, "experiment config")->required();
    inject->add_option("--out", out_override, "override output_dir");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a student checkpoint");
    eval->add_option("--config", ev_config, "experiment config")->required();
    eval->add_option("--student", ev_student, "student checkpoint path")->required();
    eval->add_option("--out", out_override, "override output_dir");

    // scan
    CLI::App* scan = app.add_subcommand("scan", "report non-allowed-script codepoints");
    std::string sc_input, sc_scripts;
    scan->add_option("--input", sc_input, "prompt file, one prompt per line")->required();
    scan->add_option("--allow-scripts", sc_scripts,
                     "comma list of allowed scripts (default latin,common)");

    // report
    CLI::App* report = app.add_subcommand("report", "print a run's manifest and metrics");
    std::string rp_dir;
    report->add_option("--run", rp_dir, "run output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        std::cout << version_string() << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        if (vocab_build->parsed()) {
            return cmd_vocab_build(vb_corpus, vb_out, vb_extra, vb_homoglyphs);
        }
        if (pretrain->parsed()) {
            ExperimentConfig config = parse_config(pt_config);
            if (!out_override.empty()) config.output_dir = out_override;
            run_pretrain(config);
            std::cout << "teacher written to " << config.output_dir << "\n";
            return 0;
        }
        if (inject->parsed()) {
            ExperimentConfig config = parse_config(in_config);
            if (!out_override.empty()) config.output_dir = out_override;
            run_experiment(config);
            std::cout << "experiment written to " << config.output_dir << "\n";
            return 0;
        }
        if (eval->parsed()) {
            ExperimentConfig config = parse_config(ev_config);
            if (!out_override.empty()) config.output_dir = out_override;
            run_evaluation(config, ev_student);
            std::cout << "evaluation written to " << config.output_dir << "\n";
            return 0;
        }
        if (scan->parsed()) {
            return cmd_scan(sc_input, sc_scripts);
        }
        if (report->parsed()) {
            return cmd_report(rp_dir);
        }
        std::cerr << app.help();
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace glyph::cli
