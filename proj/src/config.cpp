#include "unicalli/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "unicalli/error.hpp"
#include "unicalli/image.hpp"

namespace unicalli {

namespace {

std::string_view trim(std::string_view s) {
    const char* ws = " \t\r";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view v, const std::string& where) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw Error(where + ": invalid value '" + std::string(v) + "'");
    }
    return out;
}

using Setter = std::function<void(TrainConfig&, std::string_view, const std::string&)>;

template <typename T, typename F>
Setter setter(F field) {
    return [field](TrainConfig& c, std::string_view v, const std::string& where) { field(c) = parse_number<T>(v, where); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
    static const std::map<std::string, Setter, std::less<>> table = {
        {"seed", setter<std::uint64_t>([](TrainConfig& c) -> auto& { return c.seed; })},
        {"steps", setter<std::int64_t>([](TrainConfig& c) -> auto& { return c.total_steps; })},
        {"batch_size", setter<int>([](TrainConfig& c) -> auto& { return c.batch_size; })},
        {"p_gen", setter<double>([](TrainConfig& c) -> auto& { return c.p_gen; })},
        {"p_drop", setter<double>([](TrainConfig& c) -> auto& { return c.p_drop; })},
        {"p_syn", setter<double>([](TrainConfig& c) -> auto& { return c.p_syn; })},
        {"lambda", setter<double>([](TrainConfig& c) -> auto& { return c.lambda; })},
        {"lr", setter<double>([](TrainConfig& c) -> auto& { return c.lr; })},
        {"beta1", setter<double>([](TrainConfig& c) -> auto& { return c.beta1; })},
        {"beta2", setter<double>([](TrainConfig& c) -> auto& { return c.beta2; })},
        {"eps", setter<double>([](TrainConfig& c) -> auto& { return c.eps; })},
        {"checkpoint_interval", setter<std::int64_t>([](TrainConfig& c) -> auto& { return c.checkpoint_interval; })},
        {"log_interval", setter<std::int64_t>([](TrainConfig& c) -> auto& { return c.log_interval; })},
        {"ligature_rate", setter<double>([](TrainConfig& c) -> auto& { return c.ligature_rate; })},
        {"token_patch", setter<int>([](TrainConfig& c) -> auto& { return c.model.token_patch; })},
        {"d_model", setter<int>([](TrainConfig& c) -> auto& { return c.model.d_model; })},
        {"heads", setter<int>([](TrainConfig& c) -> auto& { return c.model.heads; })},
        {"blocks", setter<int>([](TrainConfig& c) -> auto& { return c.model.blocks; })},
        {"mlp_ratio", setter<int>([](TrainConfig& c) -> auto& { return c.model.mlp_ratio; })},
        {"alphabet", setter<int>([](TrainConfig& c) -> auto& { return c.model.alphabet; })},
        {"styles", setter<int>([](TrainConfig& c) -> auto& { return c.model.styles; })},
        {"scripts", setter<int>([](TrainConfig& c) -> auto& { return c.model.scripts; })},
        {"rope_base", setter<double>([](TrainConfig& c) -> auto& { return c.model.rope_base; })},
    };
    return table;
}

} // namespace

ParsedConfig parse_config(std::string_view text) {
    ParsedConfig out;
    std::set<std::string> seen;
    int line_number = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        std::string_view line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
        pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
        ++line_number;
        const std::string where = "config line " + std::to_string(line_number);
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) throw Error(where + ": expected 'key = value'");
        std::string key(trim(line.substr(0, eq)));
        std::string_view value = trim(line.substr(eq + 1));
        if (key == "\xce\xbb") key = "lambda"; // UTF-8 lambda
        if (key.empty() || value.empty()) throw Error(where + ": expected 'key = value'");
        auto it = setters().find(key);
        if (it == setters().end()) throw Error(where + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw Error(where + ": duplicate key '" + key + "'");
        it->second(out.config, value, where);
    }
    if (!seen.count("lambda")) {
        out.notes.push_back("lambda not set; using default 0.02");
    }
    out.config.validate();
    return out;
}

ParsedConfig load_config(const std::filesystem::path& path) {
    try {
        return parse_config(read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

std::string format_config(const TrainConfig& c) {
    std::ostringstream o;
    o.precision(17);
    o << "seed = " << c.seed << "\nsteps = " << c.total_steps << "\nbatch_size = " << c.batch_size
      << "\np_gen = " << c.p_gen << "\np_drop = " << c.p_drop << "\np_syn = " << c.p_syn << "\nlambda = " << c.lambda
      << "\nlr = " << c.lr << "\nbeta1 = " << c.beta1 << "\nbeta2 = " << c.beta2 << "\neps = " << c.eps
      << "\ncheckpoint_interval = " << c.checkpoint_interval << "\nlog_interval = " << c.log_interval
      << "\nligature_rate = " << c.ligature_rate << "\ntoken_patch = " << c.model.token_patch
      << "\nd_model = " << c.model.d_model << "\nheads = " << c.model.heads << "\nblocks = " << c.model.blocks
      << "\nmlp_ratio = " << c.model.mlp_ratio << "\nalphabet = " << c.model.alphabet << "\nstyles = " << c.model.styles
      << "\nscripts = " << c.model.scripts << "\nrope_base = " << c.model.rope_base << '\n';
    return o.str();
}

} // namespace unicalli
