#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace salt {

// Token id 0 is the reserved NULL token, used as the unconditional prompt.
constexpr int kNullToken = 0;
constexpr int kMaxTokens = 12;

inline const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> words = {
        "<null>", "a",      "and",      "on",    "red",   "blue",  "yellow", "magenta", "circle",
        "square", "triangle", "cross",  "green", "gray",  "white", "plain",  "farm",
    };
    return words;
}

struct TokenSequence {
    std::vector<int> ids;
    int size() const { return int(ids.size()); }
};

inline TokenSequence null_tokens() { return TokenSequence{{kNullToken}}; }

inline int word_id(const std::string& w) {
    const auto& voc = vocabulary();
    for (int i = 0; i < int(voc.size()); ++i)
        if (voc[i] == w) return i;
    return -1;
}

inline TokenSequence tokenize(const std::string& caption) {
    std::istringstream ss(caption);
    TokenSequence seq;
    std::string w;
    while (ss >> w) {
        int id = word_id(w);
        if (id < 0) throw tokenize_error("unknown word in caption: \"" + w + "\"");
        seq.ids.push_back(id);
    }
    if (seq.ids.empty()) throw tokenize_error("empty caption");
    if (seq.size() > kMaxTokens) throw tokenize_error("caption longer than " +
                                                     std::to_string(kMaxTokens) + " tokens");
    return seq;
}

}  // namespace salt
