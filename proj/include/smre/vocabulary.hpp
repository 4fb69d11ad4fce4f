#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "smre/errors.hpp"

namespace smre {

/// Token table with fixed reserved ids. Tokens below the occurrence threshold
/// fall back to UNK at encode time.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr std::size_t kReservedCount = 4;

    Vocabulary() : id_to_token_{"<pad>", "<bos>", "<eos>", "<unk>"}, min_count_(1) {}

    /// Keeps tokens with count >= min_count; ids are assigned in lexicographic
    /// order after the reserved block, so the table is independent of corpus
    /// ordering.
    static Vocabulary build(const std::vector<std::vector<std::string>>& captions, int min_count = 2) {
        if (captions.empty()) throw ContractError("build_vocabulary: empty corpus");
        if (min_count < 1) throw ContractError("build_vocabulary: min_count must be >= 1");
        std::map<std::string, int> counts;
        for (const auto& cap : captions)
            for (const auto& tok : cap) counts[tok] += 1;
        Vocabulary v;
        v.min_count_ = min_count;
        for (const auto& [tok, c] : counts) {
            if (c < min_count) continue;
            v.token_to_id_[tok] = static_cast<int>(v.id_to_token_.size());
            v.id_to_token_.push_back(tok);
        }
        return v;
    }

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int min_count() const { return min_count_; }

    int id_of(const std::string& tok) const {
        auto it = token_to_id_.find(tok);
        return it == token_to_id_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& tok) const { return token_to_id_.count(tok) != 0; }

    const std::string& token_of(int id) const {
        if (id < 0 || id >= size()) throw ContractError("token id " + std::to_string(id) + " out of range");
        return id_to_token_[static_cast<std::size_t>(id)];
    }

    /// BOS + token ids + EOS, padded with PAD up to max_len. Captions longer
    /// than max_len - 2 are truncated so EOS always fits.
    std::vector<int> encode(const std::vector<std::string>& caption, std::size_t max_len) const {
        if (max_len < 2) throw ContractError("encode: max_len must allow BOS and EOS");
        std::vector<int> ids;
        ids.reserve(max_len);
        ids.push_back(kBos);
        for (const auto& tok : caption) {
            if (ids.size() + 1 >= max_len) break;
            ids.push_back(id_of(tok));
        }
        ids.push_back(kEos);
        while (ids.size() < max_len) ids.push_back(kPad);
        return ids;
    }

    /// Strips BOS/EOS/PAD and maps ids back to tokens.
    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> out;
        for (int id : ids) {
            if (id == kBos || id == kPad) continue;
            if (id == kEos) break;
            out.push_back(token_of(id));
        }
        return out;
    }

private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
    int min_count_;
};

}  // namespace smre
