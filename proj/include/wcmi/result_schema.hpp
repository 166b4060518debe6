#pragma once

#include <string_view>

namespace wcmi::io {

/// JSON shape of every result document the tool emits; the identical text
/// ships as schemas/result.schema.json.
inline constexpr std::string_view kResultSchemaJson = R"schema({
  "type": "object",
  "required": ["tool_version", "subcommand", "result"],
  "additionalProperties": false,
  "properties": {
    "tool_version": {"type": "string"},
    "subcommand": {
      "enum": ["gmm analyze", "gmm verify", "rv estimate", "mi estimate",
               "repr train", "clf train", "eval", "bound", "saliency", "selftest"]
    },
    "result": {"type": "object"}
  },
  "oneOf": [
    {
      "properties": {
        "subcommand": {"const": "gmm analyze"},
        "result": {
          "type": "object",
          "required": ["risk", "adv_risk_h1", "adv_risk_h2", "adv_gap", "p_int", "rv",
                       "envelope_lower", "envelope_upper", "envelope_holds",
                       "gap_sandwich_holds", "chosen_head"],
          "additionalProperties": false,
          "properties": {
            "risk": {"type": "number"},
            "adv_risk_h1": {"type": "number"},
            "adv_risk_h2": {"type": "number"},
            "adv_gap": {"type": "number"},
            "p_int": {"type": "number"},
            "rv": {"type": "number"},
            "envelope_lower": {"type": "number"},
            "envelope_upper": {"type": "number"},
            "envelope_holds": {"type": "boolean"},
            "gap_sandwich_holds": {"type": "boolean"},
            "chosen_head": {"enum": ["h1", "h2"]}
          }
        }
      }
    },
    {
      "properties": {
        "subcommand": {"const": "gmm verify"},
        "result": {
          "type": "object",
          "required": ["samples", "mc_risk", "mc_adv_risk", "mc_p_int", "mc_rv",
                       "dev_risk", "dev_adv_risk", "dev_p_int", "dev_rv", "closed"],
          "additionalProperties": false,
          "properties": {
            "samples": {"type": "integer", "minimum": 0},
            "mc_risk": {"type": "number"},
            "mc_adv_risk": {"type": "number"},
            "mc_p_int": {"type": "number"},
            "mc_rv": {"type": "number"},
            "dev_risk": {"type": "number"},
            "dev_adv_risk": {"type": "number"},
            "dev_p_int": {"type": "number"},
            "dev_rv": {"type": "number"},
            "closed": {
              "type": "object",
              "required": ["risk", "adv_risk", "p_int", "rv"],
              "additionalProperties": false,
              "properties": {
                "risk": {"type": "number"},
                "adv_risk": {"type": "number"},
                "p_int": {"type": "number"},
                "rv": {"type": "number"}
              }
            }
          }
        }
      }
    },
    {
      "properties": {
        "subcommand": {"const": "rv estimate"},
        "result": {
          "type": "object",
          "required": ["j1", "j2", "rv", "epochs"],
          "additionalProperties": false,
          "properties": {
            "j1": {"type": "number"},
            "j2": {"type": "number"},
            "rv": {"type": "number"},
            "epochs": {"type": "integer", "minimum": 1},
            "per_feature": {
              "type": "array",
              "items": {
                "type": "object",
                "required": ["feature", "j1", "j2", "rv"],
                "additionalProperties": false,
                "properties": {
                  "feature": {"type": "integer", "minimum": 0},
                  "j1": {"type": "number"},
                  "j2": {"type": "number"},
                  "rv": {"type": "number"}
                }
              }
            }
          }
        }
      }
    },
    {
      "properties": {
        "subcommand": {"const": "mi estimate"},
        "result": {
          "type": "object",
          "required": ["mode", "value", "epochs"],
          "additionalProperties": false,
          "properties": {
            "mode": {"enum": ["standard", "worst_case"]},
            "value": {"type": "number"},
            "epochs": {"type": "integer", "minimum": 1}
          }
        }
      }
    },
    {
      "properties": {
        "subcommand": {"const": "repr train"},
        "result": {
          "type": "object",
          "required": ["objective", "encoder_steps", "log_entries", "final_objective"],
          "additionalProperties": false,
          "properties": {
            "objective": {"enum": ["infomax", "worst_case"]},
            "encoder_steps": {"type": "integer", "minimum": 0},
            "log_entries": {"type": "integer", "minimum": 0},
            "final_objective": {"type": ["number", "null"]}
          }
        }
      }
    },
    {
      "properties": {
        "subcommand": {"const": "clf train"},
        "result": {
          "type": "object",
          "required": ["final_loss", "epochs", "early_stopped", "snapshot_epoch", "notes"],
          "additionalProperties": false,
          "properties": {
            "final_loss": {"type": ["number", "null"]},
            "epochs": {"type": "integer", "minimum": 0},
            "early_stopped": {"type": "boolean"},
            "snapshot_epoch": {"type": "integer", "minimum": 0},
            "notes": {"type": "array", "items": {"type": "string"}}
          }
        }
      }
    },
    {
      "properties": {
        "subcommand": {"const": "eval"},
        "result": {
          "type": "object",
          "required": ["natural_accuracy", "adversarial_accuracy", "adversarial_risk",
                       "adversarial_gap", "samples", "attack", "warnings"],
          "additionalProperties": false,
          "properties": {
            "natural_accuracy": {"type": "number", "minimum": 0},
            "adversarial_accuracy": {"type": "number", "minimum": 0},
            "adversarial_risk": {"type": "number", "minimum": 0},
            "adversarial_gap": {"type": "number", "minimum": 0},
            "samples": {"type": "integer", "minimum": 1},
            "attack": {
              "type": "object",
              "required": ["norm", "epsilon", "steps", "step_size"],
              "additionalProperties": false,
              "properties": {
                "norm": {"enum": ["l2", "linf"]},
                "epsilon": {"type": "number", "minimum": 0},
                "steps": {"type": "integer", "minimum": 0},
                "step_size": {"type": "number"}
              }
            },
            "warnings": {"type": "array", "items": {"type": "string"}}
          }
        }
      }
    },
    {
      "properties": {
        "subcommand": {"const": "bound"},
        "result": {
          "type": "object",
          "required": ["mi_worst", "classes", "min_adv_risk", "max_adv_accuracy", "clamped"],
          "additionalProperties": false,
          "properties": {
            "mi_worst": {"type": "number"},
            "classes": {"type": "integer", "minimum": 2},
            "min_adv_risk": {"type": "number", "minimum": 0},
            "max_adv_accuracy": {"type": "number", "minimum": 0},
            "clamped": {"type": "boolean"}
          }
        }
      }
    },
    {
      "properties": {
        "subcommand": {"const": "saliency"},
        "result": {
          "type": "object",
          "required": ["loss", "samples", "files"],
          "additionalProperties": false,
          "properties": {
            "loss": {"enum": ["mi_critic", "cross_entropy"]},
            "samples": {"type": "integer", "minimum": 1},
            "files": {"type": "array", "items": {"type": "string"}}
          }
        }
      }
    },
    {
      "properties": {
        "subcommand": {"const": "selftest"},
        "result": {
          "type": "object",
          "required": ["pass", "checks", "matrix"],
          "additionalProperties": false,
          "properties": {
            "pass": {"type": "boolean"},
            "checks": {
              "type": "array",
              "items": {
                "type": "object",
                "required": ["name", "pass"],
                "additionalProperties": false,
                "properties": {
                  "name": {"type": "string"},
                  "pass": {"type": "boolean"}
                }
              }
            },
            "matrix": {
              "type": "array",
              "items": {
                "type": "object",
                "required": ["subcommand", "schema_ok", "replay_identical"],
                "additionalProperties": false,
                "properties": {
                  "subcommand": {"type": "string"},
                  "schema_ok": {"type": "boolean"},
                  "replay_identical": {"type": "boolean"}
                }
              }
            }
          }
        }
      }
    }
  ]
}
)schema";

}  // namespace wcmi::io
