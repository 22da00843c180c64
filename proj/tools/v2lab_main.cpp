// Command-line front end: data generation, training, inference, expert
// selection, and evaluation as reproducible runs. Exit codes: 0 success,
// 1 runtime failure, 2 usage/config error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "v2lab/checkpoint.hpp"
#include "v2lab/config.hpp"
#include "v2lab/metrics.hpp"
#include "v2lab/pccs.hpp"
#include "v2lab/synth.hpp"
#include "v2lab/train.hpp"

namespace fs = std::filesystem;

namespace {

std::string pair_dir_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "pair_%05d", index);
    return buf;
}

/// Run manifest: created before any output, then records every artifact.
class Manifest {
   public:
    Manifest(const std::string& path, const std::string& command, const std::string& config_path,
             std::uint64_t seed, std::uint64_t input_hash, const std::string& out) {
        fs::path p(path);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        out_.open(path, std::ios::binary);
        if (!out_) throw std::runtime_error("cannot write manifest: " + path);
        out_ << "command=" << command << "\n";
        out_ << "config=" << (config_path.empty() ? "<defaults>" : config_path) << "\n";
        out_ << "seed=" << seed << "\n";
        out_ << "input_hash=" << input_hash << "\n";
        out_ << "out=" << out << "\n";
        out_.flush();
    }

    void artifact(const std::string& path) {
        out_ << "artifact=" << path << "\n";
        out_.flush();
    }

   private:
    std::ofstream out_;
};

std::vector<std::string> list_pair_ids(const std::string& dataset_dir) {
    if (!fs::is_directory(dataset_dir))
        throw std::runtime_error("dataset directory not found: " + dataset_dir);
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dataset_dir)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("pair_", 0) == 0) {
            ids.push_back(entry.path().filename().string());
        }
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw std::runtime_error("no pair_* directories in " + dataset_dir);
    return ids;
}

std::vector<v2lab::PairSample> load_dataset(const std::string& dataset_dir,
                                            std::vector<std::string>& ids) {
    ids = list_pair_ids(dataset_dir);
    std::vector<v2lab::PairSample> samples;
    samples.reserve(ids.size());
    for (const std::string& id : ids) {
        samples.push_back(v2lab::prepare_sample(v2lab::read_view_pair(dataset_dir + "/" + id)));
    }
    return samples;
}

const std::set<std::string> kSceneKeys = {
    "image_size",        "n_objects",         "texture_granularity",
    "rotation_range",    "scale_range",       "translation_range",
    "photometric_jitter", "seed",             "n_pairs"};

const std::set<std::string> kTrainKeys = {
    "lr",            "beta1",          "beta2",
    "weight_decay",  "grad_clip_norm", "epochs",
    "batch_size",    "grad_accum",     "warmup_ratio",
    "max_steps",     "lambda1",        "lambda2",
    "lambda3",       "temperature",    "warmup_contrastive_steps",
    "warmup_lambda1", "ce_weight",     "dice_weight",
    "anchor_min_dist", "anchor_n_points", "anchor_outlier_mad_k",
    "anchor_foreground_threshold", "seed", "pretrain_epochs", "pretrain_max_steps"};

struct GenDataOpts {
    std::string config;
    std::string out;
    int n_pairs = 0;  // 0 = config value (default 512)
    std::int64_t seed = -1;
};

int run_gen_data(const GenDataOpts& o) {
    v2lab::KeyValueConfig kv =
        o.config.empty() ? v2lab::KeyValueConfig{} : v2lab::KeyValueConfig::parse_file(o.config);
    kv.require_known_keys(kSceneKeys);
    v2lab::SceneConfig scene = v2lab::SceneConfig::from_config(kv);
    if (o.seed >= 0) scene.seed = static_cast<std::uint64_t>(o.seed);
    int n_pairs = static_cast<int>(kv.get_int("n_pairs", 512));
    if (o.n_pairs > 0) n_pairs = o.n_pairs;
    if (n_pairs < 1) throw std::invalid_argument("gen-data: n_pairs must be >= 1");

    fs::create_directories(o.out);
    v2lab::KeyValueConfig resolved = scene.to_config();
    resolved.set("n_pairs", std::to_string(n_pairs));
    Manifest manifest(o.out + "/manifest.txt", "gen-data", o.config, scene.seed, resolved.hash(),
                      o.out);

    {
        std::ofstream cfg_out(o.out + "/scene_config.txt", std::ios::binary);
        cfg_out << resolved.canonical_text();
    }
    manifest.artifact(o.out + "/scene_config.txt");

    for (int i = 0; i < n_pairs; ++i) {
        v2lab::SceneConfig ci = scene;
        ci.seed = v2lab::mix_seed(scene.seed, static_cast<std::uint64_t>(i));
        const v2lab::ViewPair pair = v2lab::generate_pair(ci);
        const std::string dir = o.out + "/" + pair_dir_name(i);
        v2lab::write_view_pair(pair, dir);
        manifest.artifact(dir);
    }
    std::cout << "gen-data: wrote " << n_pairs << " pairs to " << o.out << "\n";
    return 0;
}

struct TrainOpts {
    std::string expert;
    std::string data;
    std::string config;
    std::string out;
    std::string init;
    std::string log;
    bool resume = false;
    std::int64_t seed = -1;
};

int run_train(const TrainOpts& o) {
    const v2lab::ExpertKind kind = v2lab::expert_kind_from_string(o.expert);
    if (kind == v2lab::ExpertKind::Anchor)
        throw std::invalid_argument("train: the anchor expert is training-free");

    v2lab::KeyValueConfig kv =
        o.config.empty() ? v2lab::KeyValueConfig{} : v2lab::KeyValueConfig::parse_file(o.config);
    kv.require_known_keys(kTrainKeys);
    v2lab::TrainConfig cfg = v2lab::TrainConfig::from_config(kv);
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    v2lab::TrainConfig pre_cfg = cfg;
    pre_cfg.epochs = static_cast<int>(kv.get_int("pretrain_epochs", cfg.epochs));
    pre_cfg.max_steps = static_cast<int>(kv.get_int("pretrain_max_steps", cfg.max_steps));
    pre_cfg.validate();

    const std::uint64_t cfg_hash = cfg.to_config().hash();
    Manifest manifest(o.out + ".manifest.txt", "train " + o.expert, o.config, cfg.seed, cfg_hash,
                      o.out);

    std::vector<std::string> ids;
    const std::vector<v2lab::PairSample> samples = load_dataset(o.data, ids);

    v2lab::Checkpoint ck;
    if (!o.init.empty()) {
        v2lab::CheckpointLoadResult loaded = v2lab::load_checkpoint(o.init, cfg_hash);
        if (loaded.config_hash_mismatch) {
            std::cerr << "warning: checkpoint " << o.init
                      << " was produced with a different config (hash mismatch)\n";
        }
        ck = std::move(loaded.checkpoint);
    } else {
        ck.visual_backend_seed = v2lab::visual_encoder_settings().seed;
        ck.anchor_backend_seed = v2lab::anchor_encoder_settings().seed;
    }
    ck.config_hash = cfg_hash;

    if (ck.find(v2lab::ExpertKind::Anchor) == nullptr) {
        std::vector<v2lab::TrainLogRow> pre_rows;
        v2lab::DecoderParams dec = v2lab::pretrain_point_decoder(samples, pre_cfg, &pre_rows);
        v2lab::SavedExpert anchor_entry;
        anchor_entry.expert = v2lab::make_anchor_expert(dec);
        anchor_entry.steps_done = 0;
        ck.upsert(std::move(anchor_entry));
        const std::string pre_log = o.out + ".pretrain.log.csv";
        v2lab::write_train_log(pre_rows, pre_log);
        manifest.artifact(pre_log);
        std::cout << "train: pretrained point decoder for " << pre_rows.size() << " steps\n";
    }

    std::int64_t start_step = 0;
    const v2lab::Expert* resume_from = nullptr;
    if (o.resume) {
        const v2lab::SavedExpert* prev = ck.find(kind);
        if (prev == nullptr)
            throw std::invalid_argument("train --resume: checkpoint has no '" + o.expert +
                                        "' expert");
        start_step = prev->steps_done;
        resume_from = &prev->expert;
    }

    std::vector<v2lab::TrainLogRow> rows;
    v2lab::Expert trained =
        v2lab::train_expert(kind, samples, cfg, ck.find(v2lab::ExpertKind::Anchor)->expert.decoder,
                            &rows, start_step, resume_from);

    v2lab::SavedExpert entry;
    entry.expert = std::move(trained);
    entry.steps_done = start_step + static_cast<std::int64_t>(rows.size());
    ck.upsert(std::move(entry));
    v2lab::save_checkpoint(ck, o.out);
    manifest.artifact(o.out);

    const std::string log_path = o.log.empty() ? o.out + ".log.csv" : o.log;
    if (o.resume && fs::exists(log_path)) {
        std::ofstream out(log_path, std::ios::binary | std::ios::app);
        if (!out) throw std::runtime_error("cannot append training log: " + log_path);
        for (const v2lab::TrainLogRow& r : rows) out << v2lab::train_log_line(r) << "\n";
    } else {
        v2lab::write_train_log(rows, log_path);
    }
    manifest.artifact(log_path);

    std::cout << "train: " << o.expert << " expert trained for " << rows.size() << " steps";
    if (!rows.empty()) std::cout << ", final loss " << rows.back().loss_total;
    std::cout << ", checkpoint " << o.out << "\n";
    return 0;
}

v2lab::Image make_overlay(const v2lab::Image& query, const v2lab::Mask& mq,
                          const v2lab::Image& target, const v2lab::Mask& pred) {
    const int w = query.width;
    const int h = query.height;
    v2lab::Image out(2 * w, h, 3);
    const float tint[3] = {1.0f, 0.15f, 0.15f};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                float l = query.at(x, y, c);
                if (mq.at(x, y)) l = 0.55f * l + 0.45f * tint[c];
                out.set(x, y, c, l);
                float r = target.at(x, y, c);
                if (pred.at(x, y)) r = 0.55f * r + 0.45f * tint[c];
                out.set(w + x, y, c, r);
            }
        }
    }
    return out;
}

std::string format_score(double v) {
    if (!std::isfinite(v)) return "inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

struct InferOpts {
    std::string ckpt;
    std::string data;
    std::string out;
    std::string expert = "all";
    std::string select = "pccs";
    int n_anchor_points = 0;  // 0 = default
    bool dump_all = false;
    bool overlay = false;
    bool anchor_only = false;
};

int run_infer(const InferOpts& o) {
    std::vector<std::string> ids;
    const std::vector<v2lab::PairSample> samples = load_dataset(o.data, ids);

    v2lab::AnchorConfig acfg;
    if (o.n_anchor_points > 0) acfg.n_points = o.n_anchor_points;
    acfg.validate();

    fs::create_directories(o.out);
    Manifest manifest(o.out + "/manifest.txt", "infer", o.ckpt, 0,
                      v2lab::fnv1a64(o.ckpt + "|" + o.data), o.out);

    if (o.anchor_only) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const v2lab::PairSample& s = samples[i];
            const v2lab::AnchorPrompt ap = v2lab::generate_anchor_prompt(
                s.feat_qa, s.feat_ta, s.pair.query_mask, acfg);
            const std::string dir = o.out + "/" + ids[i];
            fs::create_directories(dir);
            std::ofstream csv(dir + "/anchors.csv", std::ios::binary);
            if (!csv) throw std::runtime_error("cannot write " + dir + "/anchors.csv");
            csv << "x,y,label\n";
            for (std::size_t k = 0; k < ap.points.size(); ++k) {
                csv << format_score(ap.points[k].x) << "," << format_score(ap.points[k].y) << ","
                    << ap.labels[k] << "\n";
            }
            manifest.artifact(dir + "/anchors.csv");
        }
        std::cout << "infer: wrote anchor prompts for " << samples.size() << " pairs to " << o.out
                  << "\n";
        return 0;
    }

    if (o.ckpt.empty()) throw std::invalid_argument("infer: --ckpt is required");
    v2lab::Checkpoint ck = v2lab::load_checkpoint(o.ckpt).checkpoint;
    if (ck.experts.empty()) throw std::invalid_argument("infer: checkpoint has no experts");

    std::vector<v2lab::SavedExpert*> experts;
    if (o.expert == "all") {
        for (v2lab::ExpertKind k :
             {v2lab::ExpertKind::Anchor, v2lab::ExpertKind::Visual, v2lab::ExpertKind::Fusion}) {
            if (v2lab::SavedExpert* e = ck.find(k)) experts.push_back(e);
        }
    } else {
        v2lab::SavedExpert* e = ck.find(v2lab::expert_kind_from_string(o.expert));
        if (e == nullptr)
            throw std::invalid_argument("infer: checkpoint has no '" + o.expert + "' expert");
        experts.push_back(e);
    }
    if (experts.size() > 1 && o.select == "none") {
        throw std::invalid_argument(
            "infer: multiple experts need --select pccs|cyclemask, or pass a single --expert");
    }
    if (o.select != "none" && o.select != "pccs" && o.select != "cyclemask")
        throw std::invalid_argument("infer: unknown selector '" + o.select + "'");
    v2lab::SavedExpert* anchor_entry = ck.find(v2lab::ExpertKind::Anchor);
    if (o.select == "cyclemask" && anchor_entry == nullptr)
        throw std::invalid_argument("infer: cyclemask selection needs the anchor expert's decoder");

    std::ofstream selections;
    const bool selecting = experts.size() > 1 && o.select != "none";
    if (selecting) {
        selections.open(o.out + "/selections.csv", std::ios::binary);
        if (!selections) throw std::runtime_error("cannot write selections.csv in " + o.out);
        selections << "pair_id,expert,score,selected\n";
    }

    for (std::size_t i = 0; i < samples.size(); ++i) {
        const v2lab::PairSample& s = samples[i];
        const std::string dir = o.out + "/" + ids[i];
        fs::create_directories(dir);

        std::vector<v2lab::ExpertPrediction> preds;
        for (v2lab::SavedExpert* e : experts) {
            v2lab::ExpertPrediction p;
            p.expert_id = static_cast<int>(e->expert.kind);
            p.mask = v2lab::predict_mask(e->expert, s, acfg);
            preds.push_back(std::move(p));
        }
        if (o.dump_all) {
            for (std::size_t k = 0; k < preds.size(); ++k) {
                const std::string path =
                    dir + "/pred_" + v2lab::to_string(experts[k]->expert.kind) + ".pgm";
                v2lab::write_mask_pgm(preds[k].mask, path);
                manifest.artifact(path);
            }
        }

        const v2lab::Mask* chosen = &preds.front().mask;
        if (selecting) {
            v2lab::SelectionResult sel;
            if (o.select == "pccs") {
                sel = v2lab::select_expert(preds, s.feat_ta, s.feat_qa, s.pair.query_mask, acfg,
                                           32, s.pair.seed);
            } else {
                sel = v2lab::cycle_mask_select(preds, s.feat_ta, s.feat_qa, s.feat_q,
                                               s.pair.query_mask, anchor_entry->expert.decoder,
                                               acfg);
            }
            if (sel.all_invalid) {
                std::cerr << "warning: " << ids[i]
                          << ": every candidate back-projected to nothing; kept "
                          << v2lab::to_string(static_cast<v2lab::ExpertKind>(sel.selected))
                          << "\n";
            }
            for (const v2lab::CyclicScore& sc : sel.scores) {
                selections << ids[i] << ","
                           << v2lab::to_string(static_cast<v2lab::ExpertKind>(sc.expert_id)) << ","
                           << format_score(sc.mean_dist) << ","
                           << (sc.expert_id == sel.selected ? 1 : 0) << "\n";
            }
            for (const v2lab::ExpertPrediction& p : preds) {
                if (p.expert_id == sel.selected) chosen = &p.mask;
            }
        }

        v2lab::write_mask_pgm(*chosen, dir + "/pred.pgm");
        manifest.artifact(dir + "/pred.pgm");
        if (o.overlay) {
            const v2lab::Image ov =
                make_overlay(s.pair.query_image, s.pair.query_mask, s.pair.target_image, *chosen);
            v2lab::write_ppm(ov, dir + "/overlay.ppm");
            manifest.artifact(dir + "/overlay.ppm");
        }
    }
    if (selecting) manifest.artifact(o.out + "/selections.csv");
    std::cout << "infer: wrote " << samples.size() << " predictions to " << o.out << "\n";
    return 0;
}

struct SelectOpts {
    std::string ckpt;
    std::string data;
    std::string out;
    std::string select = "pccs";
    int n_anchor_points = 0;
};

int run_select(const SelectOpts& o) {
    std::vector<std::string> ids;
    const std::vector<v2lab::PairSample> samples = load_dataset(o.data, ids);
    v2lab::Checkpoint ck = v2lab::load_checkpoint(o.ckpt).checkpoint;

    v2lab::AnchorConfig acfg;
    if (o.n_anchor_points > 0) acfg.n_points = o.n_anchor_points;
    acfg.validate();

    std::vector<v2lab::SavedExpert*> experts;
    for (v2lab::ExpertKind k :
         {v2lab::ExpertKind::Anchor, v2lab::ExpertKind::Visual, v2lab::ExpertKind::Fusion}) {
        if (v2lab::SavedExpert* e = ck.find(k)) experts.push_back(e);
    }
    if (experts.empty()) throw std::invalid_argument("select: checkpoint has no experts");
    v2lab::SavedExpert* anchor_entry = ck.find(v2lab::ExpertKind::Anchor);
    if (o.select == "cyclemask" && anchor_entry == nullptr)
        throw std::invalid_argument("select: cyclemask needs the anchor expert's decoder");
    if (o.select != "pccs" && o.select != "cyclemask")
        throw std::invalid_argument("select: unknown selector '" + o.select + "'");

    Manifest manifest(o.out + ".manifest.txt", "select " + o.select, o.ckpt, 0,
                      v2lab::fnv1a64(o.ckpt + "|" + o.data), o.out);
    std::ofstream csv(o.out, std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + o.out);
    csv << "pair_id,expert,score,selected\n";

    for (std::size_t i = 0; i < samples.size(); ++i) {
        const v2lab::PairSample& s = samples[i];
        std::vector<v2lab::ExpertPrediction> preds;
        for (v2lab::SavedExpert* e : experts) {
            v2lab::ExpertPrediction p;
            p.expert_id = static_cast<int>(e->expert.kind);
            p.mask = v2lab::predict_mask(e->expert, s, acfg);
            preds.push_back(std::move(p));
        }
        v2lab::SelectionResult sel;
        if (o.select == "pccs") {
            sel = v2lab::select_expert(preds, s.feat_ta, s.feat_qa, s.pair.query_mask, acfg, 32,
                                       s.pair.seed);
        } else {
            sel = v2lab::cycle_mask_select(preds, s.feat_ta, s.feat_qa, s.feat_q,
                                           s.pair.query_mask, anchor_entry->expert.decoder, acfg);
        }
        for (const v2lab::CyclicScore& sc : sel.scores) {
            csv << ids[i] << "," << v2lab::to_string(static_cast<v2lab::ExpertKind>(sc.expert_id))
                << "," << format_score(sc.mean_dist) << ","
                << (sc.expert_id == sel.selected ? 1 : 0) << "\n";
        }
    }
    manifest.artifact(o.out);
    std::cout << "select: wrote " << o.out << "\n";
    return 0;
}

struct EvalOpts {
    std::string data;
    std::string pred;
    std::string pred_name = "pred.pgm";
    std::string out;
};

int run_eval(const EvalOpts& o) {
    const std::vector<std::string> ids = list_pair_ids(o.data);
    Manifest manifest(o.out + ".manifest.txt", "eval", "", 0,
                      v2lab::fnv1a64(o.data + "|" + o.pred + "|" + o.pred_name), o.out);
    std::vector<v2lab::MetricRow> rows;
    rows.reserve(ids.size());
    for (const std::string& id : ids) {
        const v2lab::Mask gt = v2lab::read_mask_pgm(o.data + "/" + id + "/target_mask.pgm");
        const v2lab::Mask pred = v2lab::read_mask_pgm(o.pred + "/" + id + "/" + o.pred_name);
        v2lab::MetricRow row;
        row.id = id;
        row.iou = v2lab::compute_iou(pred, gt);
        row.loc_e = v2lab::localization_error(pred, gt);
        rows.push_back(std::move(row));
    }
    const v2lab::MetricReport report = v2lab::summarize_metrics(std::move(rows));
    v2lab::write_metric_csv(report, o.out);
    manifest.artifact(o.out);
    std::printf("eval: mean_iou=%.6f mean_loc_e=%.6f over %zu pairs\n", report.mean_iou,
                report.mean_loc_e, report.rows.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-view object correspondence lab"};
    app.require_subcommand(1);

    GenDataOpts gen;
    CLI::App* cmd_gen = app.add_subcommand("gen-data", "render a synthetic two-view dataset");
    cmd_gen->add_option("--config", gen.config, "scene config file (key=value)");
    cmd_gen->add_option("--out", gen.out, "output dataset directory")->required();
    cmd_gen->add_option("--n-pairs", gen.n_pairs, "number of pairs (overrides config)");
    cmd_gen->add_option("--seed", gen.seed, "base seed (overrides config)");

    TrainOpts train;
    CLI::App* cmd_train = app.add_subcommand("train", "train one expert");
    cmd_train->add_option("--expert", train.expert, "expert kind: visual|fusion")->required();
    cmd_train->add_option("--data", train.data, "training dataset directory")->required();
    cmd_train->add_option("--config", train.config, "train config file (key=value)");
    cmd_train->add_option("--out", train.out, "output checkpoint path")->required();
    cmd_train->add_option("--init", train.init, "checkpoint to start from");
    cmd_train->add_option("--log", train.log, "training log CSV path");
    cmd_train->add_flag("--resume", train.resume, "continue the expert from --init");
    cmd_train->add_option("--seed", train.seed, "seed (overrides config)");

    InferOpts infer;
    CLI::App* cmd_infer = app.add_subcommand("infer", "predict target-view masks");
    cmd_infer->add_option("--ckpt", infer.ckpt, "checkpoint path");
    cmd_infer->add_option("--data", infer.data, "dataset directory")->required();
    cmd_infer->add_option("--out", infer.out, "output directory")->required();
    cmd_infer->add_option("--expert", infer.expert, "anchor|visual|fusion|all (default all)");
    cmd_infer->add_option("--select", infer.select, "pccs|cyclemask|none (default pccs)");
    cmd_infer->add_option("--n-anchor-points", infer.n_anchor_points,
                          "anchor points per prompt (default 1)");
    cmd_infer->add_flag("--dump-all", infer.dump_all, "also write per-expert masks");
    cmd_infer->add_flag("--overlay", infer.overlay, "write side-by-side overlay images");
    cmd_infer->add_flag("--anchor-only", infer.anchor_only,
                        "emit anchor prompt points as CSV instead of masks");

    SelectOpts select;
    CLI::App* cmd_select = app.add_subcommand("select", "score and select experts per pair");
    cmd_select->add_option("--ckpt", select.ckpt, "checkpoint path")->required();
    cmd_select->add_option("--data", select.data, "dataset directory")->required();
    cmd_select->add_option("--out", select.out, "output CSV path")->required();
    cmd_select->add_option("--select", select.select, "pccs|cyclemask (default pccs)");
    cmd_select->add_option("--n-anchor-points", select.n_anchor_points,
                           "anchor points per prompt (default 1)");

    EvalOpts eval;
    CLI::App* cmd_eval = app.add_subcommand("eval", "score predictions against ground truth");
    cmd_eval->add_option("--data", eval.data, "dataset directory with ground truth")->required();
    cmd_eval->add_option("--pred", eval.pred, "directory with per-pair predictions")->required();
    cmd_eval->add_option("--pred-name", eval.pred_name, "prediction file name (default pred.pgm)");
    cmd_eval->add_option("--out", eval.out, "metrics CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cmd_gen->parsed()) return run_gen_data(gen);
        if (cmd_train->parsed()) return run_train(train);
        if (cmd_infer->parsed()) return run_infer(infer);
        if (cmd_select->parsed()) return run_select(select);
        if (cmd_eval->parsed()) return run_eval(eval);
        std::cerr << "no command given\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
