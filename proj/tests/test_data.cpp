#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "smre/smre.hpp"

namespace fs = std::filesystem;
using smre::Vocabulary;

namespace {

fs::path temp_file(const char* stem) {
    return fs::temp_directory_path() / (std::string("smre_test_") + stem);
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("vocabulary keeps only tokens at or above min_count", "[data]") {
    std::vector<std::vector<std::string>> caps{{"a", "b"}, {"a", "c"}};
    Vocabulary v = Vocabulary::build(caps, 2);
    REQUIRE(v.contains("a"));
    REQUIRE_FALSE(v.contains("b"));
    REQUIRE_FALSE(v.contains("c"));
    REQUIRE(v.id_of("b") == Vocabulary::kUnk);
    REQUIRE(v.size() == 5);  // 4 reserved + "a"

    Vocabulary all = Vocabulary::build(caps, 1);
    REQUIRE(all.contains("b"));
    REQUIRE(all.contains("c"));
    REQUIRE(all.size() == 7);
}

TEST_CASE("vocabulary ids are stable lexicographic order", "[data]") {
    std::vector<std::vector<std::string>> caps{{"zebra", "apple"}, {"zebra", "apple", "mango"}};
    Vocabulary v = Vocabulary::build(caps, 1);
    REQUIRE(v.id_of("apple") == 4);
    REQUIRE(v.id_of("mango") == 5);
    REQUIRE(v.id_of("zebra") == 6);
    REQUIRE(v.token_of(4) == "apple");
}

TEST_CASE("vocabulary encode frames and pads captions", "[data]") {
    std::vector<std::vector<std::string>> caps{{"cat", "sat"}, {"cat", "sat"}};
    Vocabulary v = Vocabulary::build(caps, 2);
    auto ids = v.encode({"cat", "sat"}, 6);
    REQUIRE(ids == std::vector<int>{Vocabulary::kBos, v.id_of("cat"), v.id_of("sat"),
                                    Vocabulary::kEos, Vocabulary::kPad, Vocabulary::kPad});

    // truncation always leaves room for the closing token
    auto cut = v.encode({"cat", "sat", "cat", "sat", "cat"}, 4);
    REQUIRE(cut.size() == 4);
    REQUIRE(cut.front() == Vocabulary::kBos);
    REQUIRE(cut.back() == Vocabulary::kEos);

    REQUIRE_THROWS_AS(v.encode({"cat"}, 1), smre::ContractError);
}

TEST_CASE("vocabulary round trip maps unknown words to the unk token", "[data]") {
    std::vector<std::vector<std::string>> caps{{"dog", "runs"}, {"dog", "runs"}};
    Vocabulary v = Vocabulary::build(caps, 2);
    auto ids = v.encode({"dog", "jumps"}, 8);
    auto back = v.decode(ids);
    REQUIRE(back == std::vector<std::string>{"dog", "<unk>"});
}

TEST_CASE("vocabulary decode stops at the end token", "[data]") {
    std::vector<std::vector<std::string>> caps{{"a", "b"}, {"a", "b"}};
    Vocabulary v = Vocabulary::build(caps, 1);
    std::vector<int> ids{Vocabulary::kBos, v.id_of("a"), Vocabulary::kEos, v.id_of("b")};
    REQUIRE(v.decode(ids) == std::vector<std::string>{"a"});
}

TEST_CASE("generated corpus covers all ids with disjoint splits", "[data]") {
    smre::CorpusSpec spec;
    spec.n_videos = 50;
    auto corpus = smre::generate_corpus(spec);
    REQUIRE(corpus.records.size() == 50);

    std::set<std::string> train, val, test, all;
    for (const auto& r : corpus.records) {
        all.insert(r.video_id);
        if (r.split == "train") train.insert(r.video_id);
        if (r.split == "val") val.insert(r.video_id);
        if (r.split == "test") test.insert(r.video_id);
    }
    REQUIRE(all.size() == 50);
    REQUIRE(train.size() + val.size() + test.size() == 50);
    REQUIRE(train.size() == 30);
    for (const auto& id : val) REQUIRE(train.count(id) == 0);
    for (const auto& id : test) {
        REQUIRE(train.count(id) == 0);
        REQUIRE(val.count(id) == 0);
    }
}

TEST_CASE("noiseless corpora give identical features to identical latents", "[data]") {
    smre::CorpusSpec spec;
    spec.n_videos = 60;
    spec.noise_sigma = 0.0;
    auto corpus = smre::generate_corpus(spec);

    bool found_pair = false;
    for (std::size_t i = 0; i < corpus.records.size() && !found_pair; ++i) {
        for (std::size_t j = i + 1; j < corpus.records.size(); ++j) {
            if (corpus.latents[i] != corpus.latents[j]) continue;
            found_pair = true;
            REQUIRE(corpus.records[i].features == corpus.records[j].features);
            break;
        }
    }
    INFO("60 draws over 720 latent combinations should collide at least once");
    REQUIRE(found_pair);
}

TEST_CASE("factor overlap orders prototype cosine similarity", "[data]") {
    smre::CorpusSpec spec;
    spec.noise_sigma = 0.0;
    spec.n_videos = 80;
    auto corpus = smre::generate_corpus(spec);

    auto cosine = [&](std::size_t i, std::size_t j) {
        const auto& a = corpus.records[i].features;
        const auto& b = corpus.records[j].features;
        double dot = 0, na = 0, nb = 0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            dot += a[k] * b[k];
            na += a[k] * a[k];
            nb += b[k] * b[k];
        }
        return dot / std::sqrt(na * nb);
    };
    auto shared = [&](std::size_t i, std::size_t j) {
        int s = 0;
        for (std::size_t f = 0; f < 4; ++f)
            if (corpus.latents[i][f] == corpus.latents[j][f]) ++s;
        return s;
    };

    // factor codes are orthonormal blocks, so cosine == shared/4 exactly
    double min_high = 2.0, max_low = -2.0;
    int n_high = 0, n_low = 0;
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
        for (std::size_t j = i + 1; j < corpus.records.size(); ++j) {
            int s = shared(i, j);
            double c = cosine(i, j);
            REQUIRE(std::abs(c - s / 4.0) < 1e-9);
            if (s >= 3) {
                min_high = std::min(min_high, c);
                ++n_high;
            } else if (s <= 1) {
                max_low = std::max(max_low, c);
                ++n_low;
            }
        }
    }
    REQUIRE(n_high > 0);
    REQUIRE(n_low > 0);
    REQUIRE(min_high > max_low);
}

TEST_CASE("same seed regenerates a byte-identical corpus file", "[data]") {
    smre::CorpusSpec spec;
    spec.n_videos = 30;
    auto p1 = temp_file("corpus_a.jsonl");
    auto p2 = temp_file("corpus_b.jsonl");
    smre::save_dataset(smre::generate_corpus(spec).records, p1.string());
    smre::save_dataset(smre::generate_corpus(spec).records, p2.string());

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);
    REQUIRE_FALSE(b1.empty());
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("dataset write then load preserves every field", "[data]") {
    smre::CorpusSpec spec;
    spec.n_videos = 20;
    spec.t_clips = 5;
    spec.d_v = 16;
    spec.n_subjects = 4;
    spec.n_verbs = 3;
    spec.n_objects = 4;
    spec.n_scenes = 4;
    auto corpus = smre::generate_corpus(spec);
    auto path = temp_file("roundtrip.jsonl");
    smre::save_dataset(corpus.records, path.string());
    auto loaded = smre::load_dataset(path.string(), 5);
    fs::remove(path);

    REQUIRE(loaded.size() == corpus.records.size());
    // save_dataset orders by video_id, so compare against a sorted copy
    auto sorted = corpus.records;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.video_id < b.video_id; });
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        REQUIRE(loaded[i].video_id == sorted[i].video_id);
        REQUIRE(loaded[i].split == sorted[i].split);
        REQUIRE(loaded[i].t_clips == sorted[i].t_clips);
        REQUIRE(loaded[i].d_v == sorted[i].d_v);
        REQUIRE(loaded[i].captions == sorted[i].captions);
        REQUIRE(loaded[i].features == sorted[i].features);
    }
}

TEST_CASE("loading rejects a record with the wrong clip count", "[data]") {
    smre::CorpusSpec spec;
    spec.n_videos = 10;
    spec.t_clips = 4;
    spec.d_v = 8;
    spec.n_subjects = 2;
    spec.n_verbs = 2;
    spec.n_objects = 2;
    spec.n_scenes = 2;
    auto corpus = smre::generate_corpus(spec);
    auto path = temp_file("badrows.jsonl");
    smre::save_dataset(corpus.records, path.string());

    // drop one feature row from the first record
    auto lines = lines_of(path);
    auto j = nlohmann::json::parse(lines[0]);
    std::string bad_id = j["video_id"];
    j["features"].erase(j["features"].size() - 1);
    lines[0] = j.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    for (const auto& l : lines) out << l << "\n";
    out.close();

    try {
        smre::load_dataset(path.string(), 4);
        FAIL("expected a validation error");
    } catch (const smre::IoError& e) {
        REQUIRE(std::string(e.what()).find(bad_id) != std::string::npos);
    }
    fs::remove(path);
}

TEST_CASE("loading rejects malformed lines with a line number", "[data]") {
    auto path = temp_file("garbled.jsonl");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "this is not a record\n";
    out.close();
    try {
        smre::load_dataset(path.string(), 26);
        FAIL("expected a parse error");
    } catch (const smre::IoError& e) {
        REQUIRE(std::string(e.what()).find("line 1") != std::string::npos);
    }
    fs::remove(path);
}

TEST_CASE("the default corpus loads in under a second", "[data]") {
    smre::CorpusSpec spec;
    auto path = temp_file("default200.jsonl");
    smre::save_dataset(smre::generate_corpus(spec).records, path.string());

    auto t0 = std::chrono::steady_clock::now();
    auto loaded = smre::load_dataset(path.string(), 26);
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    fs::remove(path);
    REQUIRE(loaded.size() == 200);
    INFO("load took " << ms << " ms");
    REQUIRE(ms < 1000);
}

TEST_CASE("train split carries rare tokens for the unk path", "[data]") {
    smre::CorpusSpec spec;
    auto corpus = smre::generate_corpus(spec);
    Vocabulary v = smre::build_train_vocabulary(corpus.records);

    // count train-split occurrences of every token
    std::map<std::string, int> counts;
    for (const auto& r : corpus.records) {
        if (r.split != "train") continue;
        for (const auto& cap : r.captions)
            for (const auto& tok : cap) ++counts[tok];
    }
    bool has_rare = false;
    for (const auto& [tok, n] : counts) {
        if (n >= v.min_count()) {
            REQUIRE(v.contains(tok));
        } else {
            has_rare = true;
            REQUIRE_FALSE(v.contains(tok));
        }
    }
    INFO("corpus should sprinkle sub-threshold tokens so <unk> gets exercised");
    REQUIRE(has_rare);
}

TEST_CASE("split_of filters records by split name", "[data]") {
    smre::CorpusSpec spec;
    spec.n_videos = 20;
    auto corpus = smre::generate_corpus(spec);
    auto train = smre::split_of(corpus.records, "train");
    REQUIRE(train.size() == 12);
    for (const auto* r : train) REQUIRE(r->split == "train");
}

TEST_CASE("make_batch lays out features and padded captions", "[data]") {
    smre::CorpusSpec spec;
    spec.n_videos = 10;
    spec.t_clips = 4;
    spec.d_v = 8;
    spec.n_subjects = 2;
    spec.n_verbs = 2;
    spec.n_objects = 2;
    spec.n_scenes = 2;
    auto corpus = smre::generate_corpus(spec);
    Vocabulary v = smre::build_train_vocabulary(corpus.records, 1);
    auto train = smre::split_of(corpus.records, "train");
    const std::size_t cap_len = smre::batch_caption_len(train, 20);

    auto batch = smre::make_batch<float>(train, v, cap_len, 0);
    REQUIRE(batch.batch_size == train.size());
    REQUIRE(batch.caption_len == cap_len);
    REQUIRE(batch.video_features.shape() == smre::Shape{train.size(), 4, 8});
    REQUIRE(batch.captions.size() == train.size() * cap_len);
    REQUIRE(batch.caption_mask.size() == train.size() * cap_len);

    for (std::size_t i = 0; i < train.size(); ++i) {
        REQUIRE(batch.video_ids[i] == train[i]->video_id);
        // features copied row for row
        for (std::size_t k = 0; k < 4 * 8; ++k)
            REQUIRE(batch.video_features.data()[i * 32 + k] ==
                    static_cast<float>(train[i]->features[k]));
        // captions framed: BOS first, PAD masked out
        REQUIRE(batch.captions[i * cap_len] == Vocabulary::kBos);
        for (std::size_t t = 0; t < cap_len; ++t) {
            bool is_pad = batch.captions[i * cap_len + t] == Vocabulary::kPad;
            REQUIRE(batch.caption_mask[i * cap_len + t] == (is_pad ? 0 : 1));
        }
    }

    // caption_choice picks a different reference per call
    auto second = smre::make_batch<float>(train, v, cap_len, 1);
    REQUIRE(second.captions != batch.captions);
}

TEST_CASE("video_tensor wraps one record as a single-video batch", "[data]") {
    smre::CorpusSpec spec;
    spec.n_videos = 10;
    spec.t_clips = 4;
    spec.d_v = 8;
    spec.n_subjects = 2;
    spec.n_verbs = 2;
    spec.n_objects = 2;
    spec.n_scenes = 2;
    auto corpus = smre::generate_corpus(spec);
    auto t = smre::video_tensor<double>(corpus.records[3]);
    REQUIRE(t.shape() == smre::Shape{1, 4, 8});
    for (std::size_t k = 0; k < 32; ++k)
        REQUIRE(t.data()[k] == corpus.records[3].features[k]);
}

TEST_CASE("corpus spec validation rejects impossible factor layouts", "[data]") {
    smre::CorpusSpec spec;
    spec.d_v = 3;
    REQUIRE_THROWS_AS(smre::generate_corpus(spec), smre::ContractError);

    smre::CorpusSpec wide;
    wide.n_subjects = 40;  // needs 40 dims in a 16-dim factor block
    REQUIRE_THROWS_AS(smre::generate_corpus(wide), smre::ContractError);
}
