#include "convo/conversation.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "convo/errors.hpp"
#include "convo/util.hpp"

namespace convo {

std::string TurnKey::str() const { return format_turn_key(conv_id, turn_no); }

std::string format_turn_key(std::uint32_t conv_id, std::uint32_t turn_no) {
    return std::to_string(conv_id) + "_" + std::to_string(turn_no);
}

TurnKey parse_turn_key(const std::string& key) {
    auto fail = [&] { throw ParseError("malformed turn key: \"" + key + "\""); };
    auto sep = key.find('_');
    if (sep == std::string::npos || sep == 0 || sep + 1 >= key.size()) fail();
    auto parse_part = [&](const std::string& part) -> std::uint32_t {
        if (part.empty() || !std::all_of(part.begin(), part.end(),
                                         [](char c) { return c >= '0' && c <= '9'; }))
            fail();
        std::uint64_t value = 0;
        for (char c : part) {
            value = value * 10 + static_cast<std::uint64_t>(c - '0');
            if (value > UINT32_MAX) fail();
        }
        if (value == 0) fail();
        return static_cast<std::uint32_t>(value);
    };
    return {parse_part(key.substr(0, sep)), parse_part(key.substr(sep + 1))};
}

bool Conversation::has_all_manuals() const {
    return std::all_of(turns.begin(), turns.end(),
                       [](const Turn& t) { return t.manual.has_value(); });
}

TopicFormat topic_format_from_name(const std::string& name) {
    if (name == "cast-json") return TopicFormat::CastJson;
    if (name == "tsv") return TopicFormat::Tsv;
    throw DataError("unknown topic format: " + name);
}

void validate_conversation(const Conversation& conv) {
    const std::string where = "conversation " + std::to_string(conv.conv_id);
    if (conv.conv_id == 0) throw DataError("conversation id must be positive");
    if (conv.turns.empty()) throw DataError(where + ": no turns");
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
        const Turn& t = conv.turns[i];
        if (t.conv_id != conv.conv_id)
            throw DataError(where + ": turn " + std::to_string(t.turn_no) +
                            " carries conversation id " + std::to_string(t.conv_id));
        if (t.turn_no != i + 1)
            throw DataError(where + ": turn numbering gap or duplicate at position " +
                            std::to_string(i + 1) + " (found turn " +
                            std::to_string(t.turn_no) + ")");
        if (trim(t.raw).empty())
            throw DataError(where + ": empty raw utterance at turn " +
                            std::to_string(t.turn_no));
        if (t.turn_no == 1 && t.rewritten && *t.rewritten != t.raw)
            throw DataError(where + ": first turn rewrite must equal the raw utterance");
    }
}

namespace {

std::vector<Conversation> load_topics_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open topic file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("topic file " + path + ": " + e.what());
    }
    if (!doc.is_array()) throw ParseError("topic file " + path + ": expected a JSON array");
    std::vector<Conversation> convs;
    for (const auto& centry : doc) {
        Conversation conv;
        try {
            conv.conv_id = centry.at("number").get<std::uint32_t>();
            for (const auto& tentry : centry.at("turns")) {
                Turn turn;
                turn.conv_id = conv.conv_id;
                turn.turn_no = tentry.at("number").get<std::uint32_t>();
                turn.raw = trim(tentry.at("raw_utterance").get<std::string>());
                if (tentry.contains("manual_utterance"))
                    turn.manual = trim(tentry.at("manual_utterance").get<std::string>());
                conv.turns.push_back(std::move(turn));
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("topic file " + path + ", conversation " +
                             std::to_string(conv.conv_id) + ": " + e.what());
        }
        convs.push_back(std::move(conv));
    }
    return convs;
}

std::vector<Conversation> load_topics_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open topic file: " + path);
    std::vector<Conversation> convs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto cols = split(line, '\t');
        if (cols.size() != 2 && cols.size() != 3)
            throw ParseError("topic file " + path + " line " + std::to_string(lineno) +
                             ": expected 2 or 3 tab-separated columns, got " +
                             std::to_string(cols.size()));
        TurnKey key = parse_turn_key(cols[0]);
        Turn turn;
        turn.conv_id = key.conv_id;
        turn.turn_no = key.turn_no;
        turn.raw = trim(cols[1]);
        if (cols.size() == 3) turn.manual = trim(cols[2]);
        if (convs.empty() || convs.back().conv_id != key.conv_id) {
            Conversation conv;
            conv.conv_id = key.conv_id;
            convs.push_back(std::move(conv));
        }
        convs.back().turns.push_back(std::move(turn));
    }
    return convs;
}

}  // namespace

std::vector<Conversation> load_topics(const std::string& path, TopicFormat format) {
    std::vector<Conversation> convs = format == TopicFormat::CastJson
                                          ? load_topics_json(path)
                                          : load_topics_tsv(path);
    std::map<std::uint32_t, bool> seen;
    for (const Conversation& conv : convs) {
        if (seen.count(conv.conv_id))
            throw DataError("duplicate conversation " + std::to_string(conv.conv_id) +
                            " in " + path);
        seen[conv.conv_id] = true;
        validate_conversation(conv);
    }
    return convs;
}

void save_topics(const std::vector<Conversation>& convs, const std::string& path,
                 TopicFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write topic file: " + path);
    if (format == TopicFormat::CastJson) {
        nlohmann::ordered_json doc = nlohmann::ordered_json::array();
        for (const Conversation& conv : convs) {
            nlohmann::ordered_json centry;
            centry["number"] = conv.conv_id;
            centry["turns"] = nlohmann::ordered_json::array();
            for (const Turn& turn : conv.turns) {
                nlohmann::ordered_json tentry;
                tentry["number"] = turn.turn_no;
                tentry["raw_utterance"] = turn.raw;
                if (turn.manual) tentry["manual_utterance"] = *turn.manual;
                centry["turns"].push_back(std::move(tentry));
            }
            doc.push_back(std::move(centry));
        }
        out << doc.dump(2) << "\n";
    } else {
        for (const Conversation& conv : convs) {
            for (const Turn& turn : conv.turns) {
                out << format_turn_key(conv.conv_id, turn.turn_no) << '\t' << turn.raw;
                if (turn.manual) out << '\t' << *turn.manual;
                out << '\n';
            }
        }
    }
}

std::map<std::string, std::string> load_manual_rewrites(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open rewrite file: " + path);
    std::map<std::string, std::string> rewrites;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto sep = line.find('\t');
        if (sep == std::string::npos)
            throw ParseError("rewrite file " + path + " line " + std::to_string(lineno) +
                             ": expected \"<turn_key>\\t<text>\"");
        std::string key = line.substr(0, sep);
        parse_turn_key(key);  // format check
        if (rewrites.count(key))
            throw DataError("rewrite file " + path + ": duplicate turn key " + key);
        rewrites.emplace(std::move(key), trim(line.substr(sep + 1)));
    }
    return rewrites;
}

void apply_manual_rewrites(std::vector<Conversation>& convs,
                           const std::map<std::string, std::string>& sidecar) {
    for (Conversation& conv : convs) {
        for (Turn& turn : conv.turns) {
            auto it = sidecar.find(turn.key().str());
            if (it != sidecar.end()) turn.manual = it->second;
        }
    }
}

}  // namespace convo
