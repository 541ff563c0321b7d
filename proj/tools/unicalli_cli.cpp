#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "unicalli/checkpoint.hpp"
#include "unicalli/codec.hpp"
#include "unicalli/config.hpp"
#include "unicalli/error.hpp"
#include "unicalli/evaluate.hpp"
#include "unicalli/gradcheck.hpp"
#include "unicalli/manifest.hpp"
#include "unicalli/pipeline.hpp"
#include "unicalli/sampler.hpp"
#include "unicalli/selftest.hpp"
#include "unicalli/trainer.hpp"

namespace fs = std::filesystem;
using namespace unicalli;

namespace {

// Signals a failed check (as opposed to a crash) from a command body.
struct CheckFailed {};

std::vector<GlyphId> parse_ids(const std::string& text, int alphabet, int slots) {
    std::vector<GlyphId> ids;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t used = 0;
        int id = 0;
        try {
            id = std::stoi(item, &used);
        } catch (const std::exception&) {
            throw Error("--ids: '" + item + "' is not an integer");
        }
        if (used != item.size()) throw Error("--ids: '" + item + "' is not an integer");
        if (id < 0 || id >= alphabet) {
            throw Error("--ids: glyph id " + std::to_string(id) + " outside [0, " + std::to_string(alphabet) + ")");
        }
        ids.push_back(id);
    }
    if (static_cast<int>(ids.size()) != slots) {
        throw Error("--ids: expected " + std::to_string(slots) + " ids, got " + std::to_string(ids.size()));
    }
    return ids;
}

struct CondFlags {
    int style = 0;
    int script = 0;
    std::string source = "synthetic";
    std::string polarity = "light-on-dark";

    void add(CLI::App* app) {
        app->add_option("--style", style, "Style id");
        app->add_option("--script", script, "Script id");
        app->add_option("--source", source, "real | synthetic");
        app->add_option("--polarity", polarity, "light-on-dark | dark-on-light");
    }

    ConditionVector build(const ModelConfig& c) const {
        if (style < 0 || style >= c.styles) {
            throw Error("--style " + std::to_string(style) + " outside [0, " + std::to_string(c.styles) + ")");
        }
        if (script < 0 || script >= c.scripts) {
            throw Error("--script " + std::to_string(script) + " outside [0, " + std::to_string(c.scripts) + ")");
        }
        return build_conditions(parse_source(source), parse_polarity(polarity), style, script,
                                {c.styles, c.scripts});
    }
};

DuplexDiT<float> load_model(const fs::path& path) {
    Checkpoint ck = load_checkpoint(path);
    return DuplexDiT<float>(ck.config, std::move(ck.weights));
}

std::string boxes_text(const std::vector<CharBox>& boxes) {
    std::string out;
    for (const auto& b : boxes) {
        out += std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) + "," +
               std::to_string(b.y1) + "\n";
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unified calligraphy generation and recognition with a duplex diffusion transformer"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic corpus with manifest");
    fs::path synth_out;
    int synth_samples = 100, synth_alphabet = 64, synth_styles = 8, synth_scripts = 5;
    double synth_lig = 0.3;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--samples", synth_samples, "Number of samples")->check(CLI::PositiveNumber);
    synth->add_option("--alphabet", synth_alphabet, "Alphabet size")->check(CLI::Range(2, 4096));
    synth->add_option("--styles", synth_styles, "Style count")->check(CLI::PositiveNumber);
    synth->add_option("--scripts", synth_scripts, "Script count")->check(CLI::PositiveNumber);
    synth->add_option("--ligature-rate", synth_lig, "Probability of a ligature style")->check(CLI::Range(0.0, 1.0));
    synth->add_option("--seed", seed, "Seed");

    // train
    auto* train = app.add_subcommand("train", "Train a model");
    fs::path train_config, train_out;
    std::vector<fs::path> train_data;
    std::optional<fs::path> train_resume;
    std::optional<std::uint64_t> train_seed;
    std::optional<std::int64_t> train_steps;
    train->add_option("--config", train_config, "Config file")->required()->check(CLI::ExistingFile);
    train->add_option("--data", train_data, "Corpus directory or manifest (repeatable)")->required();
    train->add_option("--out", train_out, "Output directory")->required();
    train->add_option("--resume", train_resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
    train->add_option("--steps", train_steps, "Override total steps");
    train->add_option("--seed", train_seed, "Override the config seed");

    // generate
    auto* gen = app.add_subcommand("generate", "Generate a strip and box map from glyph ids");
    fs::path gen_ckpt, gen_out;
    std::string gen_ids;
    int gen_steps = 50;
    double gen_guidance = 1.0;
    CondFlags gen_cond;
    gen->add_option("--ckpt", gen_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    gen->add_option("--ids", gen_ids, "Comma-separated glyph ids")->required();
    gen_cond.add(gen);
    gen->add_option("--steps", gen_steps, "Euler steps")->check(CLI::PositiveNumber);
    gen->add_option("--guidance", gen_guidance, "Guidance scale")->check(CLI::NonNegativeNumber);
    gen->add_option("--seed", seed, "Seed");
    gen->add_option("--out", gen_out, "Output directory")->required();

    // recognize
    auto* rec = app.add_subcommand("recognize", "Recognize glyph ids from a strip");
    fs::path rec_ckpt, rec_strip, rec_out;
    std::optional<fs::path> rec_boxmap;
    int rec_steps = 50;
    bool rec_normalize = false;
    CondFlags rec_cond;
    rec->add_option("--ckpt", rec_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    rec->add_option("--strip", rec_strip, "Strip image (PGM)")->required()->check(CLI::ExistingFile);
    rec->add_option("--boxmap", rec_boxmap, "Box map image (PGM); omitted = box-free")->check(CLI::ExistingFile);
    rec_cond.add(rec);
    rec->add_option("--steps", rec_steps, "Euler steps")->check(CLI::PositiveNumber);
    rec->add_flag("--normalize", rec_normalize, "Binarize and polarity-normalize the strip first");
    rec->add_option("--seed", seed, "Seed");
    rec->add_option("--out", rec_out, "Output ids file; the content canvas goes next to it as .pgm")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
    fs::path ev_ckpt, ev_data, ev_out;
    int ev_steps = 50, ev_limit = 0;
    bool ev_box_free = false;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", ev_data, "Corpus directory or manifest")->required();
    ev->add_option("--steps", ev_steps, "Euler steps")->check(CLI::PositiveNumber);
    ev->add_option("--limit", ev_limit, "Evaluate at most this many samples (0 = all)")->check(CLI::NonNegativeNumber);
    ev->add_flag("--box-free", ev_box_free, "Recognize without ground-truth box maps");
    ev->add_option("--seed", seed, "Seed");
    ev->add_option("--out", ev_out, "Report CSV")->required();

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check on a small model");
    double gc_tol = 1e-4;
    bool gc_verbose = false;
    gc->add_option("--tolerance", gc_tol, "Maximum relative error");
    gc->add_flag("--verbose", gc_verbose, "Per-parameter report");
    gc->add_option("--seed", seed, "Seed");

    // selftest
    auto* st = app.add_subcommand("selftest", "Run the invariant suite");
    std::string st_fault;
    st->add_option("--inject-fault", st_fault, "Fault to inject (codec)")->check(CLI::IsMember({"codec"}));
    st->add_option("--seed", seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    auto as_manifest = [](const fs::path& p) { return fs::is_directory(p) ? p / kManifestName : p; };

    try {
        if (*synth) {
            Alphabet alphabet(synth_alphabet);
            SynthOptions opt;
            opt.conditions = {synth_styles, synth_scripts};
            opt.ligature_rate = synth_lig;
            auto records = synthesize_corpus(synth_out, synth_samples, alphabet, opt, seed);
            std::cout << "wrote " << records.size() << " samples to " << synth_out.string() << "\n";
        } else if (*train) {
            ParsedConfig parsed = load_config(train_config);
            for (const auto& note : parsed.notes) std::cout << "config: " << note << "\n";
            TrainConfig cfg = parsed.config;
            if (train_seed) cfg.seed = *train_seed;
            if (train_steps) cfg.total_steps = *train_steps;
            cfg.validate();
            std::vector<fs::path> manifests;
            for (const auto& d : train_data) manifests.push_back(as_manifest(d));
            FitOptions opt;
            opt.out_dir = train_out;
            opt.resume = train_resume;
            opt.log = [](const std::string& m) { std::cout << m << std::endl; };
            long long dropped = 0, eligible = 0;
            opt.on_step = [&](const TrainMetrics& m) {
                dropped += m.dropped;
                eligible += m.eligible;
            };
            FitResult r = fit(cfg, manifests, opt);
            std::printf("finished at step %lld; dropout rate %.4f over %lld labeled generation samples\n",
                        static_cast<long long>(r.final_step), eligible ? static_cast<double>(dropped) / eligible : 0.0,
                        eligible);
        } else if (*gen) {
            DuplexDiT<float> model = load_model(gen_ckpt);
            const ModelConfig& c = model.config();
            StripGeometry geo;
            auto ids = parse_ids(gen_ids, c.alphabet, geo.slots);
            Alphabet alphabet(c.alphabet);
            Codec codec;
            SampleRequest req;
            req.mode = Mode::generation;
            req.steps = gen_steps;
            req.guidance = gen_guidance;
            req.seed = seed;
            req.cond = gen_cond.build(c);
            GeneratedStrip g = generate(model, codec.encode(alphabet.render_content_canvas(ids, geo)), req);
            fs::create_directories(gen_out);
            GrayImage box_map = codec.decode(g.box_map);
            write_pgm(gen_out / "strip.pgm", codec.decode(g.strip));
            write_pgm(gen_out / "boxmap.pgm", box_map);
            write_file_atomic(gen_out / "boxes.txt", boxes_text(extract_boxes(box_map)));
            std::cout << "wrote " << (gen_out / "strip.pgm").string() << "\n";
        } else if (*rec) {
            DuplexDiT<float> model = load_model(rec_ckpt);
            const ModelConfig& c = model.config();
            Codec codec;
            GrayImage strip = read_pgm(rec_strip);
            if (rec_normalize) strip = binarize_with_polarity(strip).mask;
            std::optional<Latent> box;
            if (rec_boxmap) {
                GrayImage bm = read_pgm(*rec_boxmap);
                if (bm.height() != strip.height() || bm.width() != strip.width()) {
                    throw Error("box map dimensions differ from the strip");
                }
                box = codec.encode(bm);
            }
            StripGeometry geo;
            if (strip.height() != geo.height() || strip.width() != geo.width()) {
                throw Error("strip is " + std::to_string(strip.height()) + "x" + std::to_string(strip.width()) +
                            ", expected " + std::to_string(geo.height()) + "x" + std::to_string(geo.width()));
            }
            SampleRequest req;
            req.mode = Mode::recognition;
            req.steps = rec_steps;
            req.seed = seed;
            req.cond = rec_cond.build(c);
            Latent content = recognize(model, codec.encode(strip), box ? &*box : nullptr, req);
            GrayImage canvas = codec.decode(content);
            Alphabet alphabet(c.alphabet);
            auto ids = decode_glyphs(canvas, alphabet.atlas(geo.slot), geo);
            std::string text = std::string("variant=") + (box ? "boxed" : "box-free") + "\nids=";
            for (std::size_t i = 0; i < ids.size(); ++i) text += (i ? "," : "") + std::to_string(ids[i]);
            text += "\n";
            if (rec_out.has_parent_path()) fs::create_directories(rec_out.parent_path());
            write_file_atomic(rec_out, text);
            fs::path canvas_path = rec_out;
            canvas_path.replace_extension(".pgm");
            write_pgm(canvas_path, canvas);
            std::cout << text;
        } else if (*ev) {
            DuplexDiT<float> model = load_model(ev_ckpt);
            const ModelConfig& c = model.config();
            Alphabet alphabet(c.alphabet);
            LoadedManifest data = load_manifest(as_manifest(ev_data), alphabet, {}, {c.styles, c.scripts});
            std::vector<Sample> samples = std::move(data.labeled);
            if (ev_limit > 0 && static_cast<int>(samples.size()) > ev_limit) samples.resize(static_cast<std::size_t>(ev_limit));
            EvalOptions opt;
            opt.steps = ev_steps;
            opt.seed = seed;
            opt.box_free = ev_box_free;
            EvalReport report = evaluate(model, alphabet, samples, opt);
            if (ev_out.has_parent_path()) fs::create_directories(ev_out.parent_path());
            write_file_atomic(ev_out, report.to_csv());
            SampleEval agg = report.aggregate();
            std::printf("samples %zu  l1 %.4f  ssim %.4f  box_iou %.4f  char_acc %.4f  seq_acc %.4f\n",
                        report.samples.size(), agg.l1.value_or(0), agg.ssim.value_or(0), agg.box_iou.value_or(0),
                        agg.accuracy ? agg.accuracy->char_rate : 0.0, agg.accuracy ? agg.accuracy->sequence_rate : 0.0);
        } else if (*gc) {
            GradCheckOptions opt;
            opt.seed = seed;
            GradCheckReport r = run_gradcheck(opt);
            if (gc_verbose) {
                for (const auto& p : r.params) std::printf("%-20s %6zu  %.3e\n", p.name.c_str(), p.count, p.max_rel_error);
            }
            std::printf("max relative error %.3e (%s), tolerance %.1e\n", r.max_rel_error, r.worst.c_str(), gc_tol);
            if (!r.passed(gc_tol)) throw CheckFailed{};
        } else if (*st) {
            SelftestOptions opt;
            opt.seed = seed;
            opt.corrupt_codec = st_fault == "codec";
            bool ok = true;
            for (const auto& g : run_selftest(opt)) {
                std::printf("%-4s %s%s%s\n", g.passed ? "ok" : "FAIL", g.name.c_str(), g.detail.empty() ? "" : ": ",
                            g.detail.c_str());
                ok = ok && g.passed;
            }
            if (!ok) throw CheckFailed{};
        }
    } catch (const CheckFailed&) {
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
