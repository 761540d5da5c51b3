#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace convo {

struct TurnKey {
    std::uint32_t conv_id = 0;
    std::uint32_t turn_no = 0;

    std::string str() const;
    auto operator<=>(const TurnKey&) const = default;
};

// Accepts "<digits>_<digits>" with both values positive.
TurnKey parse_turn_key(const std::string& key);
std::string format_turn_key(std::uint32_t conv_id, std::uint32_t turn_no);

struct Turn {
    std::uint32_t conv_id = 0;
    std::uint32_t turn_no = 0;      // 1-based
    std::string raw;                // original utterance, non-empty after trim
    std::optional<std::string> manual;     // human rewrite
    std::optional<std::string> rewritten;  // model rewrite
    std::optional<std::string> answer;     // generated answer

    TurnKey key() const { return {conv_id, turn_no}; }
};

struct Conversation {
    std::uint32_t conv_id = 0;
    std::vector<Turn> turns;  // turn_no 1..n, contiguous

    bool has_all_manuals() const;
};

enum class TopicFormat { CastJson, Tsv };
TopicFormat topic_format_from_name(const std::string& name);  // "cast-json" | "tsv"

// Throws DataError naming the conversation on gaps, duplicates, empty raw
// utterances, or a first-turn rewrite differing from the raw utterance.
void validate_conversation(const Conversation& conv);

std::vector<Conversation> load_topics(const std::string& path, TopicFormat format);
void save_topics(const std::vector<Conversation>& convs, const std::string& path,
                 TopicFormat format);

// Sidecar file of "<turn_key>\t<text>" lines; duplicate keys are an error.
std::map<std::string, std::string> load_manual_rewrites(const std::string& path);

// Sidecar entries win over inline manual utterances.
void apply_manual_rewrites(std::vector<Conversation>& convs,
                           const std::map<std::string, std::string>& sidecar);

}  // namespace convo
