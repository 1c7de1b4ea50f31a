#include "glyph/text.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "glyph/error.hpp"
#include "glyph/utf8.hpp"
#include "glyph/version.hpp"

namespace glyph::text {

std::optional<char32_t> Vocab::codepoint_for(int32_t id) const {
    for (const auto& [cp, mapped] : codepoint_to_id) {
        if (mapped == id) return cp;
    }
    return std::nullopt;
}

Vocab build_vocab(const Corpus& corpus, const std::vector<char32_t>& extra_codepoints) {
    if (corpus.empty()) {
        raise(ErrorCode::EmptyCorpus, "cannot build a vocabulary from an empty corpus");
    }
    std::set<char32_t> codepoints;
    for (const auto& prompt : corpus.prompts) {
        for (char32_t cp : decode_utf8(prompt)) codepoints.insert(fold_case(cp));
    }
    codepoints.insert(extra_codepoints.begin(), extra_codepoints.end());

    Vocab vocab;
    int32_t next_id = 4;
    for (char32_t cp : codepoints) {  // std::set iterates ascending
        vocab.codepoint_to_id.emplace(cp, next_id++);
    }
    vocab.size = next_id;
    return vocab;
}

TokenSequence tokenize(std::string_view txt, const Vocab& vocab, int32_t context_length) {
    if (context_length < 3) {
        raise(ErrorCode::InvalidConfig, "context length must be at least 3");
    }
    const std::u32string folded = fold_case(decode_utf8(txt));
    const size_t body_limit = static_cast<size_t>(context_length) - 2;

    TokenSequence seq;
    seq.ids.reserve(context_length);
    seq.ids.push_back(Vocab::kBos);
    for (size_t i = 0; i < folded.size() && i < body_limit; ++i) {
        seq.ids.push_back(vocab.id_or_unk(folded[i]));
    }
    seq.eos_index = static_cast<int32_t>(seq.ids.size());
    seq.ids.push_back(Vocab::kEos);
    seq.ids.resize(context_length, Vocab::kPad);
    return seq;
}

std::string detokenize_body(const TokenSequence& seq, const Vocab& vocab) {
    std::u32string out;
    for (int32_t i = 1; i < seq.eos_index; ++i) {
        if (auto cp = vocab.codepoint_for(seq.ids[i])) out.push_back(*cp);
    }
    return encode_utf8(out);
}

Corpus filter_corpus(const Corpus& corpus, char32_t target_char) {
    Corpus out;
    out.source_path = corpus.source_path;
    for (const auto& prompt : corpus.prompts) {
        const std::u32string cps = decode_utf8(prompt);
        if (std::find(cps.begin(), cps.end(), target_char) != cps.end()) {
            out.prompts.push_back(prompt);
        }
    }
    return out;
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        raise(ErrorCode::IoError, "cannot open corpus file: " + path);
    }
    Corpus corpus;
    corpus.source_path = path;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        // Validate UTF-8 and trim ASCII whitespace at the edges.
        decode_utf8(line);
        size_t begin = line.find_first_not_of(" \t");
        size_t end = line.find_last_not_of(" \t");
        if (begin == std::string::npos) continue;
        corpus.prompts.push_back(line.substr(begin, end - begin + 1));
    }
    if (in.bad()) {
        raise(ErrorCode::IoError, "read failure on corpus file: " + path);
    }
    return corpus;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        raise(ErrorCode::IoError, "cannot open vocab file for writing: " + path);
    }
    out << "GLYPHVOCAB " << kVocabFormatVersion << "\n";
    char buf[16];
    for (const auto& [cp, id] : vocab.codepoint_to_id) {
        std::snprintf(buf, sizeof(buf), "U+%04X", static_cast<unsigned>(cp));
        out << buf << '\t' << id << '\n';
    }
    if (!out) {
        raise(ErrorCode::IoError, "write failure on vocab file: " + path);
    }
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        raise(ErrorCode::IoError, "cannot open vocab file: " + path);
    }
    std::string header;
    if (!std::getline(in, header)) {
        raise(ErrorCode::IoError, "empty vocab file: " + path);
    }
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header != "GLYPHVOCAB 1") {
        raise(ErrorCode::VersionMismatch, "unsupported vocab header: " + header);
    }
    Vocab vocab;
    std::set<int32_t> seen_ids;
    std::string line;
    int line_no = 1;
    int32_t max_id = 3;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        unsigned cp = 0;
        long id = -1;
        char tab = 0;
        std::istringstream fields(line);
        std::string cp_field, id_field;
        if (!std::getline(fields, cp_field, '\t') || !std::getline(fields, id_field)) {
            raise(ErrorCode::ParseError,
                  "vocab line " + std::to_string(line_no) + ": expected U+XXXX<TAB>id");
        }
        if (std::sscanf(cp_field.c_str(), "U+%X%c", &cp, &tab) != 1) {
            raise(ErrorCode::ParseError,
                  "vocab line " + std::to_string(line_no) + ": bad codepoint " + cp_field);
        }
        try {
            id = std::stol(id_field);
        } catch (const std::exception&) {
            raise(ErrorCode::ParseError,
                  "vocab line " + std::to_string(line_no) + ": bad id " + id_field);
        }
        if (id < 4) {
            raise(ErrorCode::ParseError,
                  "vocab line " + std::to_string(line_no) + ": ids below 4 are reserved");
        }
        if (!seen_ids.insert(static_cast<int32_t>(id)).second) {
            raise(ErrorCode::ParseError,
                  "vocab line " + std::to_string(line_no) + ": duplicate id " + id_field);
        }
        if (!vocab.codepoint_to_id.emplace(static_cast<char32_t>(cp),
                                           static_cast<int32_t>(id)).second) {
            raise(ErrorCode::ParseError,
                  "vocab line " + std::to_string(line_no) + ": duplicate codepoint");
        }
        max_id = std::max(max_id, static_cast<int32_t>(id));
    }
    vocab.size = max_id + 1;
    return vocab;
}

}  // namespace glyph::text
