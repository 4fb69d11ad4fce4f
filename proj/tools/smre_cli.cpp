// Command-line surface for the captioning workbench: corpus generation,
// training, evaluation, decoding, gradient checking, and the two result
// grids. Exit codes: 0 success, 1 input/validation problem, 2 runtime
// failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "smre/smre.hpp"

namespace {

namespace fs = std::filesystem;
using Scalar = float;

struct CommonOpts {
    std::string data;
    std::string config;
    std::string checkpoint;
    std::string out;
    long beam_size = 0;
    long seed = 0;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* beam_opt = nullptr;
};

smre::TrainConfig resolve_config(const CommonOpts& o) {
    smre::TrainConfig cfg;
    if (!o.config.empty()) cfg = smre::load_config(o.config);
    if (o.seed_opt != nullptr && o.seed_opt->count() > 0)
        cfg.seed = static_cast<std::uint32_t>(o.seed);
    if (o.beam_opt != nullptr && o.beam_opt->count() > 0)
        cfg.beam_size = static_cast<int>(o.beam_size);
    if (smre::determinism_forced_by_env()) cfg.determinism = true;
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw smre::IoError("cannot write " + p.string());
    out << text;
    if (!out) throw smre::IoError("short write to " + p.string());
}

std::string join_tokens(const smre::TokenSeq& toks) {
    std::string s;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) s += ' ';
        s += toks[i];
    }
    return s;
}

int cmd_gen_data(const smre::CorpusSpec& spec, const std::string& out_path) {
    spec.validate();
    if (out_path.empty()) throw smre::ContractError("gen-data needs --out for the corpus file");
    smre::GeneratedCorpus corpus = smre::generate_corpus(spec);
    smre::save_dataset(corpus.records, out_path);
    std::size_t n_train = 0, n_val = 0, n_test = 0;
    for (const auto& r : corpus.records) {
        if (r.split == "train") ++n_train;
        else if (r.split == "val") ++n_val;
        else ++n_test;
    }
    std::printf("wrote %zu videos (%zu train / %zu val / %zu test) to %s\n",
                corpus.records.size(), n_train, n_val, n_test, out_path.c_str());
    return 0;
}

int cmd_train(const CommonOpts& o) {
    if (o.data.empty()) throw smre::ContractError("train needs --data");
    if (o.out.empty()) throw smre::ContractError("train needs --out for the run directory");
    smre::TrainConfig cfg = resolve_config(o);
    const auto records = smre::load_dataset(o.data, cfg.dims.t_clips);
    const smre::Vocabulary vocab = smre::build_train_vocabulary(records);

    smre::TrainResult<Scalar> result;
    if (!o.checkpoint.empty()) {
        auto loaded = smre::load_checkpoint<Scalar>(o.checkpoint);
        smre::TrainConfig resumed = cfg;
        resumed.dims = smre::dims_with_vocab(cfg.dims, vocab);
        smre::check_checkpoint_dims(loaded.params, resumed.dims);
        result = smre::continue_training(records, vocab, resumed, std::move(loaded.params),
                                         std::move(loaded.opt), loaded.epoch);
    } else {
        result = smre::train_model<Scalar>(records, vocab, cfg);
    }

    fs::create_directories(o.out);
    smre::save_checkpoint(result.params, result.opt, static_cast<std::uint64_t>(cfg.epochs),
                          (fs::path(o.out) / "last.ckpt").string());
    smre::AdamState<Scalar> fresh_opt = smre::AdamState<Scalar>::init(result.best_params);
    smre::save_checkpoint(result.best_params, fresh_opt, result.best_epoch + 1,
                          (fs::path(o.out) / "best.ckpt").string());
    std::string log;
    for (const auto& l : result.log_lines) log += l + "\n";
    write_text(fs::path(o.out) / "train.log", log);
    smre::save_config(cfg, (fs::path(o.out) / "config.txt").string());

    if (!result.steps.empty()) {
        const smre::LossReport& last = result.steps.back();
        std::printf("final step: ori %.6f sup %.6f inter %.6f intra %.6f overall %.6f\n",
                    last.l_ori_cap, last.l_sup_cap, last.l_inter, last.l_intra, last.l_overall);
    }
    if (result.best_val_bleu >= 0.0)
        std::printf("best epoch %llu (val BLEU-4 %.4f)\n",
                    static_cast<unsigned long long>(result.best_epoch), result.best_val_bleu);
    std::printf("run artifacts in %s\n", o.out.c_str());
    return 0;
}

int cmd_eval(const CommonOpts& o) {
    if (o.data.empty()) throw smre::ContractError("eval needs --data");
    if (o.checkpoint.empty()) throw smre::ContractError("eval needs --checkpoint");
    smre::TrainConfig cfg = resolve_config(o);
    const auto records = smre::load_dataset(o.data, cfg.dims.t_clips);
    const smre::Vocabulary vocab = smre::build_train_vocabulary(records);
    auto loaded = smre::load_checkpoint<Scalar>(o.checkpoint);
    const smre::ModelDims dims = smre::dims_with_vocab(cfg.dims, vocab);
    smre::check_checkpoint_dims(loaded.params, dims);

    smre::Counters::global().reset();
    auto res = smre::evaluate(loaded.params, records, "test", vocab, dims,
                              static_cast<std::size_t>(cfg.beam_size));
    const smre::Counters& c = smre::Counters::global();
    if (c.compute_weights_calls != 0 || c.build_support_calls != 0 || c.encode_text_calls != 0) {
        std::fprintf(stderr,
                     "inference purity violated: weights=%llu support=%llu text=%llu\n",
                     static_cast<unsigned long long>(c.compute_weights_calls),
                     static_cast<unsigned long long>(c.build_support_calls),
                     static_cast<unsigned long long>(c.encode_text_calls));
        return 2;
    }
    std::printf("%s\n", res.metrics.to_string().c_str());
    if (!o.out.empty()) {
        std::string lines;
        for (std::size_t i = 0; i < res.video_ids.size(); ++i) {
            nlohmann::json row{{"video_id", res.video_ids[i]},
                               {"caption", join_tokens(res.hypotheses[i])}};
            lines += row.dump() + "\n";
        }
        nlohmann::json tail{{"bleu4", res.metrics.bleu.score},
                            {"rouge_l", res.metrics.rouge_l},
                            {"cider", res.metrics.cider}};
        lines += tail.dump() + "\n";
        write_text(o.out, lines);
    }
    return 0;
}

int cmd_decode(const CommonOpts& o, const std::vector<std::string>& ids) {
    if (o.data.empty()) throw smre::ContractError("decode needs --data");
    if (o.checkpoint.empty()) throw smre::ContractError("decode needs --checkpoint");
    if (ids.empty()) throw smre::ContractError("decode needs at least one video id");
    smre::TrainConfig cfg = resolve_config(o);
    const auto records = smre::load_dataset(o.data, cfg.dims.t_clips);
    const smre::Vocabulary vocab = smre::build_train_vocabulary(records);
    auto loaded = smre::load_checkpoint<Scalar>(o.checkpoint);
    const smre::ModelDims dims = smre::dims_with_vocab(cfg.dims, vocab);
    smre::check_checkpoint_dims(loaded.params, dims);
    const smre::DecoderParams<Scalar> dp = smre::decoder_params(loaded.params);

    for (const std::string& id : ids) {
        const smre::VideoRecord* rec = nullptr;
        for (const auto& r : records)
            if (r.video_id == id) rec = &r;
        if (rec == nullptr) throw smre::ContractError("decode: unknown video id '" + id + "'");
        smre::Tensor<Scalar> feats = smre::video_tensor<Scalar>(*rec);
        smre::Tensor<Scalar> v_mid =
            smre::encode_video(feats, loaded.params.at("enc.w"), loaded.params.at("enc.b"));
        smre::Tensor<Scalar> pooled = smre::pool_temporal(v_mid);
        smre::SingleVideoStepModel<Scalar> step_model(dp, smre::prepare_context(dp, v_mid, pooled));
        auto beams = smre::beam_search(step_model, static_cast<std::size_t>(cfg.beam_size),
                                       dims.max_len, smre::Vocabulary::kBos,
                                       smre::Vocabulary::kEos);
        std::printf("%s\t%s\n", id.c_str(), join_tokens(vocab.decode(beams.front().tokens)).c_str());
    }
    return 0;
}

int cmd_gradcheck(const CommonOpts& o) {
    const unsigned seed = (o.seed_opt != nullptr && o.seed_opt->count() > 0)
                              ? static_cast<unsigned>(o.seed)
                              : 11u;
    smre::CorpusSpec cs;
    cs.n_videos = 7;  // 60 percent train split leaves a 4-video minibatch
    cs.n_subjects = 3;
    cs.n_verbs = 2;
    cs.n_objects = 3;
    cs.n_scenes = 2;
    cs.t_clips = 3;
    cs.d_v = 12;
    cs.captions_per_video = 2;
    // enough clip-to-clip spread that attention gradients are well away
    // from the finite-difference noise floor
    cs.noise_sigma = 0.5;
    cs.seed = seed;
    auto corpus = smre::generate_corpus(cs);
    auto vocab = smre::build_train_vocabulary(corpus.records, 1);

    smre::TrainConfig cfg;
    cfg.dims.d_v = 12;
    cfg.dims.d_h = 10;
    cfg.dims.d_s = 10;
    cfg.dims.d_e = 6;
    cfg.dims.d_dec = 9;
    cfg.dims.d_a = 5;
    cfg.dims.t_clips = 3;
    cfg.dims.max_len = 12;
    cfg.dims.vocab = static_cast<std::size_t>(vocab.size());
    cfg.sst.y_signal = 0.5;  // keep both contrastive terms in the graph
    cfg.seed = seed;

    auto params = smre::init_model_params<double>(cfg.dims, seed);
    auto train = smre::split_of(corpus.records, "train");
    auto batch = smre::make_batch<double>(train, vocab,
                                          smre::batch_caption_len(train, cfg.dims.max_len), 0);
    auto f = [&](smre::ModelParams<double>& p) {
        std::mt19937 rng(0);  // untouched at tel_prob=1
        return smre::compute_step_loss(p, batch, cfg, rng).overall;
    };
    auto report = smre::finite_diff_check(f, params, 1e-5);
    std::printf("%s", report.to_string().c_str());
    if (!report.passes(1e-4)) {
        std::fprintf(stderr, "gradient check failed (tolerance 1e-4)\n");
        return 2;
    }
    std::printf("gradient check passed (tolerance 1e-4)\n");
    return 0;
}

int cmd_ablate(const CommonOpts& o) {
    if (o.data.empty()) throw smre::ContractError("ablate needs --data");
    smre::TrainConfig cfg = resolve_config(o);
    const auto records = smre::load_dataset(o.data, cfg.dims.t_clips);
    const smre::Vocabulary vocab = smre::build_train_vocabulary(records);
    auto rows = smre::run_ablation<Scalar>(records, vocab, cfg);

    std::printf("%-14s %5s %5s %5s %-7s %9s %9s %9s %9s %9s %9s %7s\n", "row", "l1", "l2", "l3",
                "support", "ori", "sup", "inter", "intra", "overall", "val_b4", "wcalls");
    std::string machine;
    for (const auto& r : rows) {
        std::printf("%-14s %5.2f %5.2f %5.2f %-7s %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f %7llu\n",
                    r.label.c_str(), r.lambda1, r.lambda2, r.lambda3,
                    r.support_enabled ? "on" : "off", r.last_epoch.l_ori_cap,
                    r.last_epoch.l_sup_cap, r.last_epoch.l_inter, r.last_epoch.l_intra,
                    r.last_epoch.l_overall, r.val_bleu4,
                    static_cast<unsigned long long>(r.compute_weights_calls));
        nlohmann::json j{{"label", r.label},
                         {"lambda1", r.lambda1},
                         {"lambda2", r.lambda2},
                         {"lambda3", r.lambda3},
                         {"support", r.support_enabled},
                         {"l_ori_cap", r.last_epoch.l_ori_cap},
                         {"l_sup_cap", r.last_epoch.l_sup_cap},
                         {"l_inter", r.last_epoch.l_inter},
                         {"l_intra", r.last_epoch.l_intra},
                         {"l_overall", r.last_epoch.l_overall},
                         {"val_bleu4", r.val_bleu4},
                         {"compute_weights_calls", r.compute_weights_calls},
                         {"initial_params_hash", r.initial_params_hash}};
        machine += j.dump() + "\n";
    }
    std::printf("\n%s", machine.c_str());
    if (!o.out.empty()) write_text(o.out, machine);
    return 0;
}

int cmd_sweep_y(const CommonOpts& o) {
    if (o.data.empty()) throw smre::ContractError("sweep-y needs --data");
    smre::TrainConfig cfg = resolve_config(o);
    const auto records = smre::load_dataset(o.data, cfg.dims.t_clips);
    const smre::Vocabulary vocab = smre::build_train_vocabulary(records);
    auto rows = smre::sweep_y<Scalar>(records, vocab, cfg);

    std::printf("%5s %9s %9s %9s %9s %9s %9s\n", "y", "ori", "sup", "inter", "intra", "overall",
                "val_b4");
    std::string machine;
    for (const auto& r : rows) {
        std::printf("%5.2f %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f\n", r.y, r.last_epoch.l_ori_cap,
                    r.last_epoch.l_sup_cap, r.last_epoch.l_inter, r.last_epoch.l_intra,
                    r.last_epoch.l_overall, r.val_bleu4);
        nlohmann::json j{{"y", r.y},
                         {"l_ori_cap", r.last_epoch.l_ori_cap},
                         {"l_sup_cap", r.last_epoch.l_sup_cap},
                         {"l_inter", r.last_epoch.l_inter},
                         {"l_intra", r.last_epoch.l_intra},
                         {"l_overall", r.last_epoch.l_overall},
                         {"val_bleu4", r.val_bleu4}};
        machine += j.dump() + "\n";
    }
    std::printf("\n%s", machine.c_str());
    if (!o.out.empty()) write_text(o.out, machine);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"support-set video captioning workbench"};
    app.require_subcommand(1);

    CommonOpts o;
    smre::CorpusSpec gen_spec;
    std::vector<std::string> decode_ids;

    auto add_common = [&](CLI::App* sub, bool with_data, bool with_ckpt) {
        sub->add_option("--config", o.config, "key=value config file");
        if (with_data) sub->add_option("--data", o.data, "corpus file");
        if (with_ckpt) sub->add_option("--checkpoint", o.checkpoint, "checkpoint file");
        o.beam_opt = sub->add_option("--beam-size", o.beam_size, "beam width");
        o.seed_opt = sub->add_option("--seed", o.seed, "RNG seed override");
        sub->add_option("--out", o.out, "output path");
    };

    CLI::App* sub_gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
    sub_gen->add_option("--n-videos", gen_spec.n_videos, "video count");
    sub_gen->add_option("--n-subjects", gen_spec.n_subjects, "subject factor size");
    sub_gen->add_option("--n-verbs", gen_spec.n_verbs, "verb factor size");
    sub_gen->add_option("--n-objects", gen_spec.n_objects, "object factor size");
    sub_gen->add_option("--n-scenes", gen_spec.n_scenes, "scene factor size");
    sub_gen->add_option("--captions-per-video", gen_spec.captions_per_video, "captions per video");
    sub_gen->add_option("--t-clips", gen_spec.t_clips, "clips per video");
    sub_gen->add_option("--d-v", gen_spec.d_v, "feature width");
    sub_gen->add_option("--noise-sigma", gen_spec.noise_sigma, "feature noise level");
    sub_gen->add_option("--seed", gen_spec.seed, "generator seed");
    sub_gen->add_option("--out", o.out, "corpus file to write");

    CLI::App* sub_train = app.add_subcommand("train", "train a model");
    add_common(sub_train, true, true);
    CLI::App* sub_eval = app.add_subcommand("eval", "score the test split");
    add_common(sub_eval, true, true);
    CLI::App* sub_decode = app.add_subcommand("decode", "caption specific videos");
    add_common(sub_decode, true, true);
    sub_decode->add_option("ids", decode_ids, "video ids to caption");
    CLI::App* sub_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    sub_gradcheck->add_option("--seed", o.seed, "RNG seed override");
    CLI::App* sub_ablate = app.add_subcommand("ablate", "loss-combination grid");
    add_common(sub_ablate, true, false);
    CLI::App* sub_sweep = app.add_subcommand("sweep-y", "contrastive control-signal grid");
    add_common(sub_sweep, true, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 1;
    }

    // Rebind the presence-check pointers to whichever subcommand actually
    // parsed; add_common left them pointing at the last one registered.
    auto fix_opts = [&](CLI::App* sub) {
        o.seed_opt = sub->get_option_no_throw("--seed");
        o.beam_opt = sub->get_option_no_throw("--beam-size");
    };

    try {
        if (app.got_subcommand(sub_gen)) return cmd_gen_data(gen_spec, o.out);
        if (app.got_subcommand(sub_train)) { fix_opts(sub_train); return cmd_train(o); }
        if (app.got_subcommand(sub_eval)) { fix_opts(sub_eval); return cmd_eval(o); }
        if (app.got_subcommand(sub_decode)) { fix_opts(sub_decode); return cmd_decode(o, decode_ids); }
        if (app.got_subcommand(sub_gradcheck)) { fix_opts(sub_gradcheck); return cmd_gradcheck(o); }
        if (app.got_subcommand(sub_ablate)) { fix_opts(sub_ablate); return cmd_ablate(o); }
        if (app.got_subcommand(sub_sweep)) { fix_opts(sub_sweep); return cmd_sweep_y(o); }
    } catch (const smre::ContractError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const smre::DimensionError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const smre::DegenerateInputError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const smre::ModeError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const smre::IoError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    std::cerr << "no subcommand handled\n";
    return 1;
}
