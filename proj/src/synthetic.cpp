#include "excord/synthetic.hpp"

#include <algorithm>
#include <array>
#include <random>

#include "excord/text.hpp"
#include "json.hpp"

namespace excord {

namespace {

using nlohmann::json;

constexpr std::array kFemale = {"Anna", "Maria", "Clara", "Sofia", "Elena", "Laura", "Nina", "Julia", "Greta", "Ida"};
constexpr std::array kMale = {"Tom", "Peter", "Lukas", "Marco", "David", "Oscar", "Felix", "Henrik", "Jonas", "Emil"};
constexpr std::array kSurnames = {"Berg", "Lund", "Moreau", "Rossi", "Novak", "Keller", "Silva", "Brandt",
                                  "Weber", "Costa", "Holm", "Varga"};
constexpr std::array kCities = {"Paris", "Rome", "Vienna", "Lisbon", "Oslo", "Prague", "Dublin", "Madrid",
                                "Krakow", "Zurich", "Athens", "Bergen"};
constexpr std::array kSubjects = {"physics", "law", "medicine", "history", "chemistry", "music",
                                  "architecture", "economics", "biology", "philosophy"};
constexpr std::array kInstruments = {"violin", "piano", "cello", "flute", "guitar", "trumpet", "harp", "drums"};

enum class Fact { born, studied, played };

struct Person {
    std::string name;
    bool female = false;
    std::string city;
    std::string subject;
    std::string instrument;
};

template <typename Array>
std::string pick(const Array& values, std::mt19937_64& rng) {
    return values[std::uniform_int_distribution<std::size_t>(0, values.size() - 1)(rng)];
}

Person make_person(std::mt19937_64& rng) {
    Person p;
    p.female = std::bernoulli_distribution(0.5)(rng);
    p.name = (p.female ? pick(kFemale, rng) : pick(kMale, rng)) + " " + pick(kSurnames, rng);
    p.city = pick(kCities, rng);
    p.subject = pick(kSubjects, rng);
    p.instrument = pick(kInstruments, rng);
    return p;
}

std::string question_for(Fact fact, const std::string& who) {
    switch (fact) {
        case Fact::born: return "Where was " + who + " born?";
        case Fact::studied: return "What did " + who + " study at university?";
        case Fact::played: return "Which instrument did " + who + " play?";
    }
    return {};
}

const std::string& answer_for(Fact fact, const Person& p) {
    switch (fact) {
        case Fact::born: return p.city;
        case Fact::studied: return p.subject;
        case Fact::played: return p.instrument;
    }
    return p.city;
}

// Byte offset of `answer` inside the sentence that starts at `sentence_start`.
long locate(const std::string& text, std::size_t sentence_start, const std::string& answer) {
    return static_cast<long>(text.find(answer, sentence_start));
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options) {
    std::mt19937_64 rng(options.seed);
    SyntheticCorpus corpus;
    for (std::size_t i = 0; i < options.dialogues; ++i) {
        std::array<Person, 2> people{make_person(rng), make_person(rng)};
        while (people[1].name == people[0].name) people[1] = make_person(rng);

        std::string text;
        std::array<std::array<std::size_t, 3>, 2> sentence_at{};
        for (std::size_t p = 0; p < 2; ++p) {
            const Person& person = people[p];
            sentence_at[p][0] = text.size();
            text += person.name + " was born in " + person.city + ". ";
            sentence_at[p][1] = text.size();
            text += person.name + " studied " + person.subject + " at university. ";
            sentence_at[p][2] = text.size();
            text += (person.female ? "She" : "He") + std::string(" played the ") + person.instrument + ". ";
        }
        text.pop_back();

        Dialogue dialogue;
        char id[32];
        std::snprintf(id, sizeof id, "syn_%04zu", i);
        dialogue.id = id;
        dialogue.document = Document::make(dialogue.id, text, people[0].name + " and " + people[1].name);

        std::vector<std::pair<std::string, std::string>> asked;  // (question, gold rewrite)
        std::vector<std::pair<std::size_t, Fact>> targets;
        for (std::size_t p = 0; p < 2; ++p) {
            std::array<Fact, 3> facts{Fact::born, Fact::studied, Fact::played};
            std::shuffle(facts.begin(), facts.end(), rng);
            const std::string pronoun = people[p].female ? "she" : "he";
            for (std::size_t f = 0; f < 3; ++f) {
                const std::string who = f == 0 ? people[p].name : pronoun;
                asked.emplace_back(question_for(facts[f], who), question_for(facts[f], people[p].name));
                targets.emplace_back(p, facts[f]);
            }
        }
        const bool ask_unanswerable = std::bernoulli_distribution(0.5)(rng);

        for (std::size_t t = 0; t < asked.size(); ++t) {
            const auto [p, fact] = targets[t];
            Turn turn;
            turn.turn_index = static_cast<int>(t + 1);
            turn.question_id = dialogue.id + "_q#" + std::to_string(t);
            turn.question = asked[t].first;
            turn.answer_text = answer_for(fact, people[p]);
            turn.answer_char_start = locate(text, sentence_at[p][static_cast<std::size_t>(fact)], turn.answer_text);
            turn.answer_char_end = turn.answer_char_start + static_cast<long>(turn.answer_text.size());
            turn.reference_answers = {turn.answer_text};
            dialogue.turns.push_back(std::move(turn));
        }
        if (ask_unanswerable) {
            const Person& last = people[1];
            Turn turn;
            turn.turn_index = static_cast<int>(dialogue.turns.size() + 1);
            turn.question_id = dialogue.id + "_q#" + std::to_string(dialogue.turns.size());
            turn.question = std::string("Did ") + (last.female ? "she" : "he") + " have any children?";
            turn.answer_text = std::string(kUnanswerable);
            turn.reference_answers = {turn.answer_text};
            asked.emplace_back(turn.question, "Did " + last.name + " have any children?");
            dialogue.turns.push_back(std::move(turn));
        }
        validate_dialogue(dialogue);

        const bool recorded = std::bernoulli_distribution(options.rewritten_fraction)(rng);
        std::vector<std::string> history_texts;
        for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
            RewriteRecord record{dialogue.id, static_cast<int>(t + 1), history_texts, asked[t].first, asked[t].second};
            if (recorded) corpus.rewrites.push_back(record);
            corpus.gold.push_back(std::move(record));
            history_texts.push_back(dialogue.turns[t].question);
            history_texts.push_back(dialogue.turns[t].answer_text);
        }
        corpus.dialogues.push_back(std::move(dialogue));
    }
    return corpus;
}

std::string to_quac_json(const std::vector<Dialogue>& dialogues) {
    json data = json::array();
    for (const Dialogue& dialogue : dialogues) {
        json qas = json::array();
        for (const Turn& turn : dialogue.turns) {
            json answer = {{"text", turn.answer_text}};
            answer["answer_start"] =
                turn.unanswerable()
                    ? -1L
                    : static_cast<long>(text::codepoint_length(std::string_view(dialogue.document.text)
                                                                   .substr(0, static_cast<std::size_t>(turn.answer_char_start))));
            json refs = json::array();
            for (const auto& ref : turn.reference_answers) refs.push_back({{"text", ref}});
            qas.push_back({{"id", turn.question_id}, {"question", turn.question}, {"answers", refs}, {"orig_answer", answer}});
        }
        data.push_back({{"title", dialogue.document.title},
                        {"paragraphs", json::array({{{"id", dialogue.id},
                                                     {"context", dialogue.document.text},
                                                     {"qas", qas}}})}});
    }
    return json{{"data", data}}.dump(2);
}

std::string to_canard_json(const std::vector<RewriteRecord>& records) {
    json out = json::array();
    for (const RewriteRecord& r : records) {
        out.push_back({{"QuAC_dialog_id", r.dialogue_id},
                       {"Question_no", r.turn_index},
                       {"History", r.history_texts},
                       {"Question", r.original},
                       {"Rewrite", r.rewrite}});
    }
    return out.dump(2);
}

}  // namespace excord
