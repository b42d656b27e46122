// Command-line front end: training, encode/decode, generation, metrics,
// reports and plots. Exit codes: 0 ok, 2 usage/config, 3 data, 4 divergence.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>

#include "mrq/config.hpp"
#include "mrq/metrics.hpp"
#include "mrq/serialize.hpp"
#include "mrq/token_lm.hpp"

namespace fs = std::filesystem;
using namespace mrq;

namespace {

std::string trace_path(const std::string& out, const std::string& tag) {
    return out + "." + tag + ".csv";
}

Trace single_column(const Trace& src, const std::string& column) {
    Trace t;
    t.notes = src.notes;
    t.columns = {"step", column};
    std::size_t step_col = src.column_index("step");
    std::size_t col = src.column_index(column);
    for (const auto& row : src.rows) t.add_row({row[step_col], row[col]});
    return t;
}

std::vector<Signal> load_corpus_dir(const std::string& dir) {
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".mrqa") paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw DataError("eval: no .mrqa clips in " + dir);
    std::vector<Signal> clips;
    clips.reserve(paths.size());
    for (const auto& p : paths) clips.push_back(load_signal(p.string()));
    return clips;
}

TokenStream encode_with_model(const AnyModel& any, const Signal& clip) {
    if (any.kind == ModelKind::Teacher) {
        const NacModel& model = *any.teacher;
        auto fwd = model.rvq().encode(model.encode(clip));
        return token_stream_from_rvq(fwd.tokens, model.base_rate_hz(), model.config().vocab);
    }
    const StudentModel& model = *any.student;
    FeatureMap x0 = model.encode(clip);
    auto fwd = model.mrvq().forward(x0);
    return token_stream_from_codes(fwd.all_codes(), model.mrvq().config(), x0.frames());
}

Signal decode_with_model(const AnyModel& any, const TokenStream& ts) {
    if (any.kind == ModelKind::Teacher) {
        const NacModel& model = *any.teacher;
        if (ts.blocks.size() != 1) throw DataError("decode: teacher streams carry one block");
        FeatureMap h = model.rvq().decode(ts.blocks[0].rows, ts.duration_frames, model.base_rate_hz());
        FeatureMap y = model.decode_latent(h);
        return Signal{{y.values().begin(), y.values().end()}, model.config().sample_rate_hz};
    }
    const StudentModel& model = *any.student;
    std::vector<std::vector<TokenRow>> rows;
    for (const auto& b : ts.blocks) rows.push_back(b.rows);
    FeatureMap h = model.mrvq().decode_from_b(rows);
    FeatureMap y = model.decode_latent(h);
    return Signal{{y.values().begin(), y.values().end()}, model.nac_config().sample_rate_hz};
}

int run(int argc, char** argv) {
    CLI::App app{"hierarchical residual-VQ codec and token-generation harness"};
    app.require_subcommand(1);

    std::string config_path, out_path, in_path, model_path, teacher_path, report_path;
    std::string predictor_name = "count", cond_text, truth_path, trace_file, corpus_dir, title = "trace";
    double seconds = 0.0, temperature = 0.0;
    std::size_t synth_index = 0, train_clips = 16;

    auto* synth = app.add_subcommand("synth", "synthesize one corpus clip to a .mrqa file");
    synth->add_option("--config", config_path, "run config")->required();
    synth->add_option("--out", out_path, "output clip path")->required();
    synth->add_option("--index", synth_index, "clip index within the corpus");

    auto* train = app.add_subcommand("train-teacher", "train the teacher codec");
    train->add_option("--config", config_path, "run config")->required();
    train->add_option("--out", out_path, "checkpoint path")->required();

    auto* post = app.add_subcommand("post-train", "post-train a student against a frozen teacher");
    post->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
    post->add_option("--config", config_path, "run config")->required();
    post->add_option("--out", out_path, "student checkpoint path")->required();

    auto* encode = app.add_subcommand("encode", "encode a clip to a token stream");
    encode->add_option("--model", model_path, "checkpoint")->required();
    encode->add_option("--in", in_path, "input clip (.mrqa)")->required();
    encode->add_option("--out", out_path, "output token stream (.mrqt)")->required();

    auto* decode = app.add_subcommand("decode", "decode a token stream to a clip");
    decode->add_option("--model", model_path, "checkpoint")->required();
    decode->add_option("--in", in_path, "input token stream (.mrqt)")->required();
    decode->add_option("--out", out_path, "output clip (.mrqa)")->required();

    auto* gen = app.add_subcommand("gen", "generate a token stream with the AR+NAR pipeline");
    gen->add_option("--model", model_path, "student checkpoint")->required();
    gen->add_option("--predictor", predictor_name, "count | oracle");
    gen->add_option("--cond", cond_text, "conditioning symbols");
    gen->add_option("--seconds", seconds, "duration to generate (count predictor)");
    gen->add_option("--truth", truth_path, "source clip replayed by the oracle predictor");
    gen->add_option("--train-clips", train_clips, "corpus clips used to fit the count predictor");
    gen->add_option("--config", config_path, "run config (corpus for the count predictor)");
    gen->add_option("--temperature", temperature, "sampling temperature (0 = greedy)");
    gen->add_option("--out", out_path, "output token stream (.mrqt)")->required();

    auto* eval = app.add_subcommand("eval", "reconstruction metrics over a corpus directory");
    eval->add_option("--model", model_path, "checkpoint")->required();
    eval->add_option("--corpus", corpus_dir, "directory of .mrqa clips")->required();
    eval->add_option("--report", report_path, "output CSV")->required();

    auto* bitrate_cmd = app.add_subcommand("bitrate", "print the transmitted bits per second");
    bitrate_cmd->add_option("--config", config_path, "run config")->required();

    auto* budget = app.add_subcommand("budget", "print per-block token budgets for a duration");
    budget->add_option("--seconds", seconds, "duration")->required();
    budget->add_option("--config", config_path, "run config")->required();

    auto* plot = app.add_subcommand("plot", "render a CSV trace as an SVG line chart");
    plot->add_option("--trace", trace_file, "input CSV")->required();
    plot->add_option("--out", out_path, "output SVG")->required();
    plot->add_option("--title", title, "chart title");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (synth->parsed()) {
        RunConfig cfg = load_run_config(config_path);
        SyntheticSpec spec = cfg.synthetic_spec();
        spec.seed = cfg.seed + synth_index;
        save_signal(out_path, synth_signal(spec));
        return 0;
    }

    if (train->parsed()) {
        RunConfig cfg = load_run_config(config_path);
        Rng rng(cfg.seed);
        NacModel model(cfg.nac_config(), rng);
        auto corpus = synth_corpus(cfg.synthetic_spec(), cfg.corpus_clips);
        Trace trace = train_teacher(model, corpus, cfg.teacher_options());
        save_teacher(out_path, model);
        write_csv(trace_path(out_path, "trace"), trace);
        std::cout << "teacher saved to " << out_path << ", final loss "
                  << (trace.rows.empty() ? 0.0 : trace.rows.back().back()) << "\n";
        return 0;
    }

    if (post->parsed()) {
        RunConfig cfg = load_run_config(config_path);
        NacModel teacher = load_teacher(teacher_path);
        auto corpus = synth_corpus(cfg.synthetic_spec(), cfg.corpus_clips);
        Trace trace;
        StudentModel student;
        try {
            student = post_train(teacher, cfg.mrvq_config(), cfg.distill_plan(), corpus,
                                 cfg.post_options(), trace);
        } catch (const DivergenceError&) {
            write_csv(trace_path(out_path, "trace"), trace);  // dump what we have
            throw;
        }
        save_student(out_path, student);
        write_csv(trace_path(out_path, "trace"), trace);
        write_csv(trace_path(out_path, "nac"), single_column(trace, "nac"));
        write_csv(trace_path(out_path, "fld"), single_column(trace, "fld"));
        write_csv(trace_path(out_path, "hsr"), single_column(trace, "hsr"));
        std::cout << "student saved to " << out_path << "\n";
        return 0;
    }

    if (encode->parsed()) {
        AnyModel any = load_model(model_path);
        Signal clip = load_signal(in_path);
        save_token_stream(out_path, encode_with_model(any, clip));
        return 0;
    }

    if (decode->parsed()) {
        AnyModel any = load_model(model_path);
        TokenStream ts = load_token_stream(in_path);
        save_signal(out_path, decode_with_model(any, ts));
        return 0;
    }

    if (gen->parsed()) {
        AnyModel any = load_model(model_path);
        if (any.kind != ModelKind::Student) throw ConfigError("gen: needs a student checkpoint");
        const StudentModel& student = *any.student;
        const MrvqConfig& mcfg = student.mrvq().config();

        Conditioning cond;
        cond.alphabet = 256;
        for (char c : cond_text) cond.symbols.push_back(static_cast<std::uint16_t>(c) & 0xff);

        SampleOptions opts;
        if (temperature > 0.0) {
            opts.mode = SampleMode::Temperature;
            opts.temperature = temperature;
        }
        if (const char* env = std::getenv("MRQ_SEED")) opts.seed = std::stoull(env);

        GridSpec spec = grid_spec_for_block(student.mrvq(), 1);
        std::unique_ptr<Predictor> pred;
        std::size_t frames = 0;
        if (predictor_name == "oracle") {
            if (truth_path.empty()) throw ConfigError("gen: oracle predictor needs --truth");
            Signal clip = load_signal(truth_path);
            auto fwd = student.mrvq().forward(student.encode(clip));
            frames = fwd.blocks.front().codes.b.front().ids.size();
            pred = std::make_unique<OraclePredictor>(fwd.all_codes(), mcfg);
        } else if (predictor_name == "count") {
            if (config_path.empty()) throw ConfigError("gen: count predictor needs --config");
            if (seconds <= 0.0) throw ConfigError("gen: count predictor needs --seconds");
            RunConfig cfg = load_run_config(config_path);
            auto corpus = synth_corpus(cfg.synthetic_spec(), train_clips);
            auto counter = std::make_unique<CountPredictor>(mcfg.vocab);
            for (const auto& clip : corpus) {
                auto fwd = student.mrvq().forward(student.encode(clip));
                TokenGrid g;
                g.rows = fwd.blocks.front().codes.b;
                g.frame_rate_hz = spec.frame_rate_hz;
                g.vocab = mcfg.vocab;
                counter->fit_ar(g);
                counter->fit_nar(fwd.all_codes(), mcfg);
            }
            frames = static_cast<std::size_t>(std::llround(seconds * spec.frame_rate_hz));
            pred = std::move(counter);
        } else {
            throw ConfigError("gen: unknown predictor '" + predictor_name + "'");
        }

        TokenGrid b1 = ar_generate(*pred, cond, frames, spec, opts);
        GenResult result = nar_refine_all(student.mrvq(), *pred, cond, b1, opts);
        std::size_t n0 = result.h.frames();
        save_token_stream(out_path, token_stream_from_codes(result.codes, mcfg, n0));
        std::cout << "generated " << frames << " first-block frames (" << result.ledger.predictor_calls
                  << " refinement predictor calls)\n";
        return 0;
    }

    if (eval->parsed()) {
        AnyModel any = load_model(model_path);
        auto clips = load_corpus_dir(corpus_dir);
        Trace report;
        report.columns = {"clip", "snr_db"};
        double snr_sum = 0.0;
        std::vector<std::vector<double>> usage;
        double bitrate = 0.0;
        std::vector<double> tokens_per_second;
        if (any.kind == ModelKind::Student) {
            const auto& mcfg = any.student->mrvq().config();
            bitrate = bitrate_bps(mcfg);
            usage.assign(mcfg.blocks.size(), std::vector<double>(mcfg.vocab, 0.0));
            for (const auto& bc : mcfg.blocks)
                tokens_per_second.push_back(bc.frame_rate_hz *
                                            static_cast<double>(bc.degenerate() ? bc.alpha : bc.beta));
        } else {
            const auto& cfg = any.teacher->config();
            bitrate = bitrate_bps_rvq(cfg.layers, any.teacher->base_rate_hz(), cfg.vocab);
            usage.assign(1, std::vector<double>(cfg.vocab, 0.0));
            tokens_per_second.push_back(any.teacher->base_rate_hz() * static_cast<double>(cfg.layers));
        }
        for (std::size_t i = 0; i < clips.size(); ++i) {
            double snr = 0.0;
            if (any.kind == ModelKind::Student) {
                auto rec = any.student->reconstruct(clips[i]);
                snr = rec.snr_db;
                auto fwd = any.student->mrvq().forward(any.student->encode(clips[i]));
                for (std::size_t k = 0; k < fwd.blocks.size(); ++k)
                    for (TokenId id : fwd.blocks[k].codes.b.front().ids) usage[k][id] += 1.0;
            } else {
                auto rec = reconstruct(*any.teacher, clips[i]);
                snr = rec.snr_db;
                auto fwd = any.teacher->rvq().encode(any.teacher->encode(clips[i]));
                for (TokenId id : fwd.tokens.front().ids) usage[0][id] += 1.0;
            }
            snr_sum += snr;
            report.add_row({static_cast<double>(i), snr});
        }
        report.notes.push_back("bitrate_bps = " + std::to_string(bitrate));
        report.notes.push_back("mean_snr_db = " + std::to_string(snr_sum / clips.size()));
        for (std::size_t k = 0; k < usage.size(); ++k) {
            report.notes.push_back("tokens_per_second." + std::to_string(k + 1) + " = " +
                                   std::to_string(tokens_per_second[k]));
            report.notes.push_back("perplexity." + std::to_string(k + 1) + " = " +
                                   std::to_string(codebook_perplexity(usage[k])));
        }
        write_csv(report_path, report);
        std::cout << "mean snr " << snr_sum / clips.size() << " dB over " << clips.size()
                  << " clips\n";
        return 0;
    }

    if (bitrate_cmd->parsed()) {
        RunConfig cfg = load_run_config(config_path);
        std::cout << bitrate_bps(cfg.mrvq_config()) << "\n";
        return 0;
    }

    if (budget->parsed()) {
        RunConfig cfg = load_run_config(config_path);
        TokenBudget tb = token_budget(seconds, cfg.mrvq_config());
        std::cout << "ar_frames " << tb.ar_frames << "\n";
        for (std::size_t k = 0; k < tb.frames_per_block.size(); ++k)
            std::cout << "block " << k + 1 << ": frames " << tb.frames_per_block[k] << " rows "
                      << tb.rows_per_block[k] << " tokens " << tb.tokens_per_block[k] << "\n";
        std::cout << "total_tokens " << tb.total_tokens << "\n";
        return 0;
    }

    if (plot->parsed()) {
        write_svg_plot(out_path, read_csv(trace_file), title);
        return 0;
    }

    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
