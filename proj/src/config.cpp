#include "mrq/config.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace mrq {

MrvqConfig RunConfig::mrvq_config() const {
    MrvqConfig cfg;
    if (config_name == "custom") {
        if (custom_blocks.empty()) throw ConfigError("config: custom table needs block.* keys");
        cfg.blocks = custom_blocks;
        cfg.base_rate_hz = static_cast<double>(sample_rate_hz);
        for (std::size_t s : encoder_strides) cfg.base_rate_hz /= static_cast<double>(s);
        cfg.vocab = 1024;
        cfg.dim = 128;
    } else {
        cfg = config_from_table(config_name);
    }
    if (vocab != 0) cfg.vocab = vocab;
    if (dim != 0) cfg.dim = dim;
    cfg.validate();
    return cfg;
}

NacConfig RunConfig::nac_config() const {
    NacConfig cfg;
    cfg.sample_rate_hz = sample_rate_hz;
    cfg.strides = encoder_strides;
    MrvqConfig mc = mrvq_config();
    cfg.dim = mc.dim;
    cfg.mid_dim = mid_dim ? mid_dim : mc.dim;
    cfg.layers = teacher_layers;
    cfg.vocab = mc.vocab;
    cfg.decay = ema_decay;
    cfg.validate();
    if (cfg.base_rate_hz() != mc.base_rate_hz)
        throw ConfigError("config: encoder strides do not land on the quantizer base rate");
    return cfg;
}

SyntheticSpec RunConfig::synthetic_spec() const {
    SyntheticSpec spec;
    spec.num_tones = num_tones;
    spec.freq_lo_hz = freq_lo_hz;
    spec.freq_hi_hz = freq_hi_hz;
    spec.am_lo_hz = am_lo_hz;
    spec.am_hi_hz = am_hi_hz;
    spec.freq_snap_hz = freq_snap_hz;
    spec.duration_s = clip_seconds;
    spec.sample_rate_hz = sample_rate_hz;
    spec.seed = seed;
    return spec;
}

DistillPlan RunConfig::distill_plan() const {
    MrvqConfig mc = mrvq_config();
    DistillPlan plan = DistillPlan::defaults_for(mc, teacher_layers);
    if (!pairs.empty()) plan.pairs = pairs;
    if (!fld_weights.empty()) plan.fld_weights = fld_weights;
    if (!hsr_weights.empty()) plan.hsr_weights = hsr_weights;
    plan.steps = post_steps;
    plan.lr = post_lr;
    plan.from_scratch = from_scratch;
    plan.validate(mc, teacher_layers);
    return plan;
}

TeacherTrainOptions RunConfig::teacher_options() const {
    TeacherTrainOptions opts;
    opts.steps = teacher_steps;
    opts.lr = teacher_lr;
    opts.commit_weight = commit_weight;
    opts.kmeans_iters = kmeans_iters;
    opts.warmup_clips = warmup_clips;
    opts.quantizer_dropout = quantizer_dropout;
    opts.seed = seed + 1;
    return opts;
}

PostTrainOptions RunConfig::post_options() const {
    PostTrainOptions opts;
    opts.commit_weight = commit_weight;
    opts.kmeans_iters = kmeans_iters;
    opts.warmup_clips = warmup_clips;
    opts.seed = seed + 2;
    return opts;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep)) parts.push_back(trim(part));
    return parts;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        long long n = std::stoll(v);
        if (n < 0) throw std::out_of_range("negative");
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

RunConfig parse_run_config(std::istream& is) {
    RunConfig cfg;
    std::map<std::size_t, LrvqConfig> blocks;
    std::size_t declared_blocks = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(line_no) + " is not key = value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key.rfind("block.", 0) == 0) {
            auto parts = split(key, '.');
            if (parts.size() != 3) throw ConfigError("config: bad block key " + key);
            std::size_t idx = parse_size(key, parts[1]);
            if (idx == 0) throw ConfigError("config: block indices are 1-based");
            auto& blk = blocks[idx];
            blk.k = idx;
            if (parts[2] == "alpha")
                blk.alpha = parse_size(key, val);
            else if (parts[2] == "beta")
                blk.beta = parse_size(key, val);
            else if (parts[2] == "gamma")
                blk.gamma = parse_size(key, val);
            else if (parts[2] == "stride")
                blk.stride = parse_size(key, val);
            else if (parts[2] == "frame_rate_hz")
                blk.frame_rate_hz = parse_double(key, val);
            else
                throw ConfigError("config: unknown block field " + key);
            continue;
        }
        if (key == "config_name")
            cfg.config_name = val;
        else if (key == "blocks")
            declared_blocks = parse_size(key, val);
        else if (key == "vocab")
            cfg.vocab = parse_size(key, val);
        else if (key == "dim")
            cfg.dim = parse_size(key, val);
        else if (key == "seed")
            cfg.seed = parse_size(key, val);
        else if (key == "sample_rate_hz")
            cfg.sample_rate_hz = parse_size(key, val);
        else if (key == "encoder_strides") {
            cfg.encoder_strides.clear();
            for (const auto& p : split(val, ',')) cfg.encoder_strides.push_back(parse_size(key, p));
        } else if (key == "mid_dim")
            cfg.mid_dim = parse_size(key, val);
        else if (key == "teacher_layers")
            cfg.teacher_layers = parse_size(key, val);
        else if (key == "teacher_steps")
            cfg.teacher_steps = parse_size(key, val);
        else if (key == "teacher_lr")
            cfg.teacher_lr = parse_double(key, val);
        else if (key == "commit_weight")
            cfg.commit_weight = parse_double(key, val);
        else if (key == "ema_decay")
            cfg.ema_decay = parse_double(key, val);
        else if (key == "quantizer_dropout")
            cfg.quantizer_dropout = parse_bool(key, val);
        else if (key == "corpus_clips")
            cfg.corpus_clips = parse_size(key, val);
        else if (key == "clip_seconds")
            cfg.clip_seconds = parse_double(key, val);
        else if (key == "num_tones")
            cfg.num_tones = parse_size(key, val);
        else if (key == "freq_lo_hz")
            cfg.freq_lo_hz = parse_double(key, val);
        else if (key == "freq_hi_hz")
            cfg.freq_hi_hz = parse_double(key, val);
        else if (key == "am_lo_hz")
            cfg.am_lo_hz = parse_double(key, val);
        else if (key == "am_hi_hz")
            cfg.am_hi_hz = parse_double(key, val);
        else if (key == "freq_snap_hz")
            cfg.freq_snap_hz = parse_double(key, val);
        else if (key == "post_steps")
            cfg.post_steps = parse_size(key, val);
        else if (key == "post_lr")
            cfg.post_lr = parse_double(key, val);
        else if (key == "fld_weights") {
            cfg.fld_weights.clear();
            for (const auto& p : split(val, ',')) cfg.fld_weights.push_back(parse_double(key, p));
        } else if (key == "hsr_weights") {
            cfg.hsr_weights.clear();
            for (const auto& p : split(val, ',')) cfg.hsr_weights.push_back(parse_double(key, p));
        } else if (key == "pairs") {
            cfg.pairs.clear();
            for (const auto& p : split(val, ',')) {
                auto st = split(p, ':');
                if (st.size() != 2) throw ConfigError("config: pairs entries use s:t");
                cfg.pairs.emplace_back(parse_size(key, st[0]), parse_size(key, st[1]));
            }
        } else if (key == "from_scratch")
            cfg.from_scratch = parse_bool(key, val);
        else if (key == "kmeans_iters")
            cfg.kmeans_iters = parse_size(key, val);
        else if (key == "warmup_clips")
            cfg.warmup_clips = parse_size(key, val);
        else
            throw ConfigError("config: unknown key '" + key + "'");
    }
    if (!blocks.empty()) {
        if (declared_blocks == 0) declared_blocks = blocks.rbegin()->first;
        for (std::size_t i = 1; i <= declared_blocks; ++i) {
            auto it = blocks.find(i);
            if (it == blocks.end()) throw ConfigError("config: missing block." + std::to_string(i));
            cfg.custom_blocks.push_back(it->second);
        }
        if (blocks.size() != declared_blocks)
            throw ConfigError("config: block indices exceed the declared count");
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    RunConfig cfg = parse_run_config(is);
    if (const char* env = std::getenv("MRQ_SEED")) {
        cfg.seed = parse_size("MRQ_SEED", env);
    }
    return cfg;
}

void write_run_config(std::ostream& os, const RunConfig& cfg) {
    os << "config_name = " << cfg.config_name << "\n";
    if (!cfg.custom_blocks.empty()) {
        os << "blocks = " << cfg.custom_blocks.size() << "\n";
        for (const auto& b : cfg.custom_blocks) {
            os << "block." << b.k << ".alpha = " << b.alpha << "\n";
            os << "block." << b.k << ".beta = " << b.beta << "\n";
            os << "block." << b.k << ".gamma = " << b.gamma << "\n";
            os << "block." << b.k << ".stride = " << b.stride << "\n";
            os << "block." << b.k << ".frame_rate_hz = " << b.frame_rate_hz << "\n";
        }
    }
    if (cfg.vocab) os << "vocab = " << cfg.vocab << "\n";
    if (cfg.dim) os << "dim = " << cfg.dim << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "sample_rate_hz = " << cfg.sample_rate_hz << "\n";
    os << "encoder_strides = ";
    for (std::size_t i = 0; i < cfg.encoder_strides.size(); ++i)
        os << (i ? "," : "") << cfg.encoder_strides[i];
    os << "\n";
    if (cfg.mid_dim) os << "mid_dim = " << cfg.mid_dim << "\n";
    os << "teacher_layers = " << cfg.teacher_layers << "\n";
    os << "teacher_steps = " << cfg.teacher_steps << "\n";
    os << "teacher_lr = " << cfg.teacher_lr << "\n";
    os << "commit_weight = " << cfg.commit_weight << "\n";
    os << "ema_decay = " << cfg.ema_decay << "\n";
    os << "quantizer_dropout = " << (cfg.quantizer_dropout ? "true" : "false") << "\n";
    os << "corpus_clips = " << cfg.corpus_clips << "\n";
    os << "clip_seconds = " << cfg.clip_seconds << "\n";
    os << "num_tones = " << cfg.num_tones << "\n";
    os << "freq_lo_hz = " << cfg.freq_lo_hz << "\n";
    os << "freq_hi_hz = " << cfg.freq_hi_hz << "\n";
    os << "am_lo_hz = " << cfg.am_lo_hz << "\n";
    os << "am_hi_hz = " << cfg.am_hi_hz << "\n";
    os << "freq_snap_hz = " << cfg.freq_snap_hz << "\n";
    os << "post_steps = " << cfg.post_steps << "\n";
    os << "post_lr = " << cfg.post_lr << "\n";
    if (!cfg.fld_weights.empty()) {
        os << "fld_weights = ";
        for (std::size_t i = 0; i < cfg.fld_weights.size(); ++i) os << (i ? "," : "") << cfg.fld_weights[i];
        os << "\n";
    }
    if (!cfg.hsr_weights.empty()) {
        os << "hsr_weights = ";
        for (std::size_t i = 0; i < cfg.hsr_weights.size(); ++i) os << (i ? "," : "") << cfg.hsr_weights[i];
        os << "\n";
    }
    if (!cfg.pairs.empty()) {
        os << "pairs = ";
        for (std::size_t i = 0; i < cfg.pairs.size(); ++i)
            os << (i ? "," : "") << cfg.pairs[i].first << ":" << cfg.pairs[i].second;
        os << "\n";
    }
    os << "from_scratch = " << (cfg.from_scratch ? "true" : "false") << "\n";
    os << "kmeans_iters = " << cfg.kmeans_iters << "\n";
    os << "warmup_clips = " << cfg.warmup_clips << "\n";
}

}  // namespace mrq
