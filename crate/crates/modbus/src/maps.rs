//! Built-in register maps for the supported energy meters.
//!
//! Parameter lists follow the meters' monitored-parameter sets. Register
//! addresses are representative layouts: real installations override them
//! from configuration.

use gateway_core::ParameterSpec;

use crate::codec::{DataType, RegisterCodec};
use crate::device::{ModbusBinding, RegisterMap};

const PHASES: [&str; 3] = ["L1", "L2", "L3"];
const PHASES_TOTAL: [&str; 4] = ["L1", "L2", "L3", "total"];

struct MapBuilder {
    map: RegisterMap,
    next: u16,
}

impl MapBuilder {
    fn at(address: u16) -> Self {
        MapBuilder {
            map: RegisterMap {
                parameters: Vec::new(),
                bindings: Vec::new(),
            },
            next: address,
        }
    }

    fn jump(&mut self, address: u16) -> &mut Self {
        self.next = address;
        self
    }

    fn add(&mut self, name: String, unit: &str, codec: RegisterCodec) -> &mut Self {
        self.map.parameters.push(ParameterSpec::real(name.clone(), unit));
        self.map
            .bindings
            .push(ModbusBinding::holding(name, self.next, codec));
        self.next += codec.span();
        self
    }

    fn series(&mut self, prefix: &str, suffixes: &[&str], unit: &str, codec: RegisterCodec) -> &mut Self {
        for s in suffixes {
            self.add(format!("{prefix} {s}"), unit, codec);
        }
        self
    }

    fn build(&mut self) -> RegisterMap {
        std::mem::replace(
            &mut self.map,
            RegisterMap {
                parameters: Vec::new(),
                bindings: Vec::new(),
            },
        )
    }
}

fn cem_block(b: &mut MapBuilder) {
    b.series("Current", &PHASES, "A", RegisterCodec::scaled(DataType::U32, 0.001))
        .series("Voltage", &PHASES, "V", RegisterCodec::scaled(DataType::U32, 0.1))
        .series("Cos phi", &PHASES, "", RegisterCodec::scaled(DataType::I16, 0.001))
        .series("Apparent power", &PHASES_TOTAL, "VA", RegisterCodec::new(DataType::U32))
        .series("Active power", &PHASES_TOTAL, "W", RegisterCodec::new(DataType::I32))
        .series("Reactive power", &PHASES_TOTAL, "var", RegisterCodec::new(DataType::I32));
}

/// Circutor CEM-C31 power meter: 23 parameters.
pub fn cem_c31() -> RegisterMap {
    let mut b = MapBuilder::at(0x0000);
    cem_block(&mut b);
    b.jump(0x0100)
        .add("Imported energy".into(), "Wh", RegisterCodec::new(DataType::U32))
        .add("Exported energy".into(), "Wh", RegisterCodec::new(DataType::U32));
    b.build()
}

/// Circutor CIRWATT B power meter: the CEM-C31 set plus frequency, power
/// factor and four-quadrant reactive energy, 29 parameters.
pub fn cirwatt_b() -> RegisterMap {
    let mut b = MapBuilder::at(0x0000);
    cem_block(&mut b);
    b.add("Frequency".into(), "Hz", RegisterCodec::scaled(DataType::U16, 0.01))
        .add("Power factor".into(), "", RegisterCodec::scaled(DataType::I16, 0.001))
        .jump(0x0100)
        .add("Imported energy".into(), "Wh", RegisterCodec::new(DataType::U32))
        .add("Exported energy".into(), "Wh", RegisterCodec::new(DataType::U32))
        .series("Reactive energy", &["Q1", "Q2", "Q3", "Q4"], "varh", RegisterCodec::new(DataType::U32));
    b.build()
}

/// LACECAL ITR 2.0 historical data block: 29 parameters, addresses relative
/// to the configured data base address.
pub fn lacecal_itr2() -> RegisterMap {
    let power = RegisterCodec::new(DataType::F32);
    let energy = RegisterCodec::scaled(DataType::U32, 0.01);
    let mut b = MapBuilder::at(0x0000);
    b.series("Power consumed from grid", &PHASES_TOTAL, "W", power)
        .series("Power consumed by building", &PHASES_TOTAL, "W", power)
        .series("Power produced by inverter", &PHASES_TOTAL, "W", power)
        .series("Power excess", &PHASES_TOTAL, "W", power)
        .series("Energy total consumption", &PHASES_TOTAL, "kWh", energy)
        .series("Energy consumed from grid", &PHASES_TOTAL, "kWh", energy)
        .series("Energy exported to grid", &PHASES_TOTAL, "kWh", energy)
        .add("Energy produced by inverter".into(), "kWh", energy);
    b.build()
}

/// Looks a built-in map up by its configuration name.
pub fn by_name(name: &str) -> Option<RegisterMap> {
    match name {
        "cem-c31" => Some(cem_c31()),
        "cirwatt-b" => Some(cirwatt_b()),
        "lacecal-itr2" => Some(lacecal_itr2()),
        _ => None,
    }
}
