#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "smre/errors.hpp"

namespace smre {

/// One synthetic video: a fixed number of clip feature rows plus reference
/// captions, tagged with its train/val/test membership.
struct VideoRecord {
    std::string video_id;
    std::size_t t_clips = 0;
    std::size_t d_v = 0;
    std::vector<double> features;  // row-major [t_clips, d_v]
    std::vector<std::vector<std::string>> captions;
    std::string split;  // "train" | "val" | "test"
};

struct CorpusSpec {
    std::size_t n_videos = 200;
    std::size_t n_subjects = 6;
    std::size_t n_verbs = 5;
    std::size_t n_objects = 6;
    std::size_t n_scenes = 4;
    std::size_t captions_per_video = 3;
    std::size_t t_clips = 26;
    std::size_t d_v = 64;
    double noise_sigma = 0.1;
    unsigned seed = 7;

    void validate() const {
        if (n_videos < 1 || captions_per_video < 1 || t_clips < 1 || d_v < 4)
            throw ContractError("corpus spec: all counts must be >= 1 (and d_v >= 4)");
        if (noise_sigma < 0.0) throw ContractError("corpus spec: noise_sigma must be >= 0");
    }
};

struct GeneratedCorpus {
    std::vector<VideoRecord> records;
    std::vector<std::array<std::size_t, 4>> latents;   // per video (subject, verb, object, scene)
    std::vector<std::vector<double>> prototypes;       // noiseless per-clip feature row per video
};

namespace detail {

struct FactorBank {
    // Surface forms per factor value; index 0 is the canonical word.
    std::vector<std::vector<std::string>> subjects{
        {"man", "guy"}, {"woman", "lady"}, {"dog", "puppy"},
        {"cat", "kitten"}, {"boy", "kid"}, {"girl", "child"}};
    std::vector<std::vector<std::string>> verbs{
        {"holds", "grabs"}, {"throws", "tosses"}, {"eats", "devours"},
        {"pushes", "shoves"}, {"lifts", "raises"}};
    std::vector<std::vector<std::string>> objects{
        {"ball", "sphere"}, {"box", "crate"}, {"apple", "fruit"},
        {"book", "novel"}, {"cup", "mug"}, {"toy", "doll"}};
    std::vector<std::vector<std::string>> scenes{
        {"park", "garden"}, {"kitchen", "pantry"}, {"street", "road"}, {"beach", "shore"}};
};

/// Orthonormal code rows (one per factor value) inside a block of `dim`
/// coordinates; orthonormality makes prototype cosine exactly
/// (#shared factors)/4 in the noiseless case.
inline std::vector<std::vector<double>> orthonormal_codes(std::size_t count, std::size_t dim,
                                                          std::mt19937& rng) {
    if (count > dim)
        throw ContractError("factor size " + std::to_string(count) +
                            " exceeds code dimension " + std::to_string(dim));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> codes;
    while (codes.size() < count) {
        std::vector<double> v(dim);
        for (double& x : v) x = gauss(rng);
        for (const auto& u : codes) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += v[i] * u[i];
            for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-8) continue;  // resample a degenerate draw
        for (double& x : v) x /= norm;
        codes.push_back(std::move(v));
    }
    return codes;
}

}  // namespace detail

/// Deterministic compositional corpus: each video's latent
/// (subject, verb, object, scene) tuple maps to a prototype feature row
/// tiled over the clips plus seeded Gaussian noise, and to templated
/// captions whose synonym choices make semantically related videos share
/// tokens. Split ratios are 0.6 / 0.2 / 0.2, disjoint by video id.
inline GeneratedCorpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    detail::FactorBank bank;
    const std::array<std::size_t, 4> sizes{spec.n_subjects, spec.n_verbs, spec.n_objects, spec.n_scenes};
    const std::array<const std::vector<std::vector<std::string>>*, 4> words{
        &bank.subjects, &bank.verbs, &bank.objects, &bank.scenes};
    for (std::size_t f = 0; f < 4; ++f)
        if (sizes[f] > words[f]->size())
            throw ContractError("factor size " + std::to_string(sizes[f]) +
                                " exceeds available surface forms (" +
                                std::to_string(words[f]->size()) + ")");

    std::mt19937 rng(spec.seed);
    const std::size_t block = spec.d_v / 4;
    std::array<std::vector<std::vector<double>>, 4> codes;
    for (std::size_t f = 0; f < 4; ++f) codes[f] = detail::orthonormal_codes(sizes[f], block, rng);

    GeneratedCorpus corpus;
    std::uniform_int_distribution<std::size_t> pick_subject(0, sizes[0] - 1);
    std::uniform_int_distribution<std::size_t> pick_verb(0, sizes[1] - 1);
    std::uniform_int_distribution<std::size_t> pick_object(0, sizes[2] - 1);
    std::uniform_int_distribution<std::size_t> pick_scene(0, sizes[3] - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (std::size_t n = 0; n < spec.n_videos; ++n) {
        std::array<std::size_t, 4> latent{pick_subject(rng), pick_verb(rng), pick_object(rng),
                                          pick_scene(rng)};
        std::vector<double> proto(spec.d_v, 0.0);
        for (std::size_t f = 0; f < 4; ++f)
            for (std::size_t i = 0; i < block; ++i) proto[f * block + i] = codes[f][latent[f]][i];

        VideoRecord rec;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "vid_%04zu", n);
        rec.video_id = idbuf;
        rec.t_clips = spec.t_clips;
        rec.d_v = spec.d_v;
        rec.features.resize(spec.t_clips * spec.d_v);
        for (std::size_t t = 0; t < spec.t_clips; ++t)
            for (std::size_t c = 0; c < spec.d_v; ++c)
                rec.features[t * spec.d_v + c] = proto[c] + spec.noise_sigma * noise(rng);

        for (std::size_t k = 0; k < spec.captions_per_video; ++k) {
            auto surface = [&](std::size_t f) -> const std::string& {
                const auto& forms = (*words[f])[latent[f]];
                // canonical form dominates; synonyms appear in a quarter of captions
                std::size_t idx = (k > 0 && forms.size() > 1 && unit(rng) < 0.25)
                                      ? 1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(forms.size() - 1))
                                      : 0;
                if (idx >= forms.size()) idx = forms.size() - 1;
                return forms[idx];
            };
            std::vector<std::string> cap{"the", surface(0), surface(1), "the",
                                         surface(2), "in",  "the",     surface(3)};
            rec.captions.push_back(std::move(cap));
        }
        corpus.latents.push_back(latent);
        corpus.prototypes.push_back(std::move(proto));
        corpus.records.push_back(std::move(rec));
    }

    // Disjoint split by video id, seeded independently of the feature draws.
    std::vector<std::size_t> order(spec.n_videos);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937 split_rng(spec.seed + 0x5157u);
    std::shuffle(order.begin(), order.end(), split_rng);
    const std::size_t n_train = (spec.n_videos * 6) / 10;
    const std::size_t n_val = (spec.n_videos - n_train) / 2;
    for (std::size_t i = 0; i < order.size(); ++i) {
        std::string& split = corpus.records[order[i]].split;
        if (i < n_train)
            split = "train";
        else if (i < n_train + n_val)
            split = "val";
        else
            split = "test";
    }

    // a couple of singleton train-split tokens keep the UNK path exercised
    int sprinkled = 0;
    for (auto& rec : corpus.records) {
        if (rec.split != "train") continue;
        rec.captions.front().push_back(sprinkled == 0 ? "quietly" : "briskly");
        if (++sprinkled == 2) break;
    }
    return corpus;
}

inline void save_dataset(const std::vector<VideoRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (const auto& rec : records) {
        nlohmann::json j;
        j["video_id"] = rec.video_id;
        j["split"] = rec.split;
        nlohmann::json feats = nlohmann::json::array();
        for (std::size_t t = 0; t < rec.t_clips; ++t) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < rec.d_v; ++c) row.push_back(rec.features[t * rec.d_v + c]);
            feats.push_back(std::move(row));
        }
        j["features"] = std::move(feats);
        j["captions"] = rec.captions;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("write failed for " + path);
}

/// Parses and validates a JSON-lines corpus; records come back ordered by
/// video_id.
inline std::vector<VideoRecord> load_dataset(const std::string& path,
                                             std::size_t expect_t_clips = 26) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<VideoRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("parse error at " + path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        VideoRecord rec;
        try {
            rec.video_id = j.at("video_id").get<std::string>();
            rec.split = j.value("split", std::string("train"));
            const auto& feats = j.at("features");
            rec.t_clips = feats.size();
            for (const auto& row : feats) {
                if (rec.d_v == 0) rec.d_v = row.size();
                if (row.size() != rec.d_v)
                    throw IoError("ragged feature rows in record " + rec.video_id);
                for (const auto& v : row) rec.features.push_back(v.get<double>());
            }
            rec.captions = j.at("captions").get<std::vector<std::vector<std::string>>>();
        } catch (const nlohmann::json::exception& e) {
            throw IoError("parse error at " + path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (rec.t_clips != expect_t_clips)
            throw IoError("record " + rec.video_id + " has " + std::to_string(rec.t_clips) +
                          " feature rows, expected " + std::to_string(expect_t_clips));
        if (rec.captions.empty()) throw IoError("record " + rec.video_id + " has no captions");
        for (double v : rec.features)
            if (!std::isfinite(v)) throw IoError("non-finite feature in record " + rec.video_id);
        if (rec.split != "train" && rec.split != "val" && rec.split != "test")
            throw IoError("record " + rec.video_id + " has unknown split '" + rec.split + "'");
        records.push_back(std::move(rec));
    }
    std::sort(records.begin(), records.end(),
              [](const VideoRecord& a, const VideoRecord& b) { return a.video_id < b.video_id; });
    return records;
}

inline std::vector<const VideoRecord*> split_of(const std::vector<VideoRecord>& records,
                                                const std::string& split) {
    std::vector<const VideoRecord*> out;
    for (const auto& r : records)
        if (r.split == split) out.push_back(&r);
    return out;
}

}  // namespace smre
