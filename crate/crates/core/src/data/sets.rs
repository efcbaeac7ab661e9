use serde::{Deserialize, Serialize};

use super::transform::TransformCode;
use crate::error::{Error, Result};

/// Variables with their reference transformation codes. The first 19 entries
/// form the medium set, the first 34 the large set, all 120 the extra-large set.
const REFERENCE_VARIABLES: [(&str, u8); 120] = [
    ("PAYEMS", 5),
    ("INDPRO", 5),
    ("FEDFUNDS", 1),
    ("UNRATE", 1),
    ("RPI", 5),
    ("DPCERA3M086SBEA", 5),
    ("CMRMTSPLx", 5),
    ("CUMFNS", 1),
    ("CES0600000007", 1),
    ("HOUST", 4),
    ("S&P 500", 5),
    ("T1YFFM", 1),
    ("T10YFFM", 1),
    ("BAAFFM", 1),
    ("EXUSUKx", 5),
    ("WPSFD49207", 5),
    ("PPICMM", 5),
    ("PCEPI", 5),
    ("CES0600000008", 6),
    ("HWI", 1),
    ("HWIURATIO", 1),
    ("CLF16OV", 5),
    ("M1SL", 5),
    ("M2SL", 5),
    ("M2REAL", 5),
    ("S&P div yield", 1),
    ("S&P PE ratio", 5),
    ("TB6MS", 1),
    ("GS1", 1),
    ("GS5", 1),
    ("AAA", 1),
    ("BAA", 1),
    ("OILPRICEx", 5),
    ("INVEST", 5),
    ("W875RX1", 5),
    ("RETAILx", 5),
    ("IPFPNSS", 5),
    ("IPFINAL", 5),
    ("IPCONGD", 5),
    ("IPDCONGD", 5),
    ("IPNCONGD", 5),
    ("IPBUSEC", 5),
    ("IPMAT", 5),
    ("IPDMAT", 5),
    ("IPNMAT", 5),
    ("IPMANSICS", 5),
    ("IPB51222S", 5),
    ("IPFUELS", 5),
    ("CE16OV", 5),
    ("UEMPMEAN", 1),
    ("UEMPLT5", 5),
    ("UEMP5TO14", 5),
    ("UEMP15OV", 5),
    ("UEMP15T26", 5),
    ("UEMP27OV", 5),
    ("CLAIMSx", 5),
    ("USGOOD", 5),
    ("CES1021000001", 5),
    ("USCONS", 5),
    ("MANEMP", 5),
    ("DMANEMP", 5),
    ("NDMANEMP", 5),
    ("SRVPRD", 5),
    ("USTPU", 5),
    ("USWTRADE", 5),
    ("USTRADE", 5),
    ("USFIRE", 5),
    ("USGOVT", 5),
    ("AWOTMAN", 1),
    ("AWHMAN", 1),
    ("HOUSTNE", 4),
    ("HOUSTMW", 4),
    ("HOUSTS", 4),
    ("HOUSTW", 4),
    ("PERMIT", 4),
    ("PERMITNE", 4),
    ("PERMITMW", 4),
    ("PERMITS", 4),
    ("PERMITW", 4),
    ("AMDMNOx", 5),
    ("AMDMUOx", 5),
    ("BUSINVx", 5),
    ("ISRATIOx", 1),
    ("BOGMBASE", 5),
    ("TOTRESNS", 5),
    ("BUSLOANS", 5),
    ("REALLN", 5),
    ("NONREVSL", 5),
    ("CONSPI", 1),
    ("CP3Mx", 1),
    ("TB3MS", 1),
    ("GS10", 1),
    ("COMPAPFFx", 1),
    ("TB3SMFFM", 1),
    ("TB6SMFFM", 1),
    ("T5YFFM", 1),
    ("AAAFFM", 1),
    ("EXSZUSx", 5),
    ("EXJPUSx", 5),
    ("EXCAUSx", 5),
    ("WPSFD49502", 5),
    ("WPSID61", 5),
    ("WPSID62", 5),
    ("CPIAUCSL", 5),
    ("CPIAPPSL", 5),
    ("CPITRNSL", 5),
    ("CPIMEDSL", 5),
    ("CUSR0000SAC", 5),
    ("CUSR0000SAD", 5),
    ("CUSR0000SAS", 5),
    ("CPIULFSL", 5),
    ("CUSR0000SA0L2", 5),
    ("CUSR0000SA0L5", 5),
    ("DDURRG3M086SBEA", 5),
    ("DNDGRG3M086SBEA", 5),
    ("DSERRG3M086SBEA", 5),
    ("CES2000000008", 5),
    ("CES3000000008", 5),
    ("DTCOLNVHFNM", 5),
    ("DTCTHFNM", 5),
];

const MEDIUM_LEN: usize = 19;
const LARGE_LEN: usize = 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Medium,
    Large,
    Xlarge,
}

impl SetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "medium" => Ok(SetKind::Medium),
            "large" => Ok(SetKind::Large),
            "xlarge" => Ok(SetKind::Xlarge),
            other => Err(Error::Config(format!("unknown variable set {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SetKind::Medium => "medium",
            SetKind::Large => "large",
            SetKind::Xlarge => "xlarge",
        }
    }
}

/// An ordered list of variable identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSet {
    pub name: String,
    pub members: Vec<String>,
}

impl VariableSet {
    pub fn standard(kind: SetKind) -> Self {
        let len = match kind {
            SetKind::Medium => MEDIUM_LEN,
            SetKind::Large => LARGE_LEN,
            SetKind::Xlarge => REFERENCE_VARIABLES.len(),
        };
        VariableSet {
            name: kind.as_str().to_string(),
            members: REFERENCE_VARIABLES[..len]
                .iter()
                .map(|(n, _)| n.to_string())
                .collect(),
        }
    }

    pub fn custom(name: impl Into<String>, members: Vec<String>) -> Self {
        VariableSet {
            name: name.into(),
            members,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Reference transformation code for a known variable, if it is listed.
pub fn reference_code(name: &str) -> Option<TransformCode> {
    REFERENCE_VARIABLES
        .iter()
        .find(|(n, _)| *n == name)
        .and_then(|(_, c)| TransformCode::from_code(*c).ok())
}
