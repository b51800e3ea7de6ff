"""Writes the bundled 39-bus case with wind, storage and the tie-line contingency set."""
import json
import pathlib
import sys

loads = {1:(97.6,44.2),3:(322,2.4),4:(500,184),7:(233.8,84),8:(522,176.6),9:(6.5,-66.6),12:(8.53,88),
15:(320,153),16:(329,32.3),18:(158,30),20:(680,103),21:(274,115),23:(247.5,84.6),24:(308.6,-92.2),
25:(224,47.2),26:(139,17),27:(281,75.5),28:(206,27.6),29:(283.5,26.9),31:(9.2,4.6),39:(1104,250)}
sink = {3,4,5,6,7,8,9,10,11,12,13,14,15,31,32,39}
gens = [ # bus, Pg, Qmax, Qmin, Vg, Pmax, H, xd'
(30,380,400,140,1.0499,1040,42.0,0.031),
(31,677.871,300,-100,0.982,646,30.3,0.0697),
(32,650,300,150,0.9841,725,35.8,0.0531),
(33,632,250,0,0.9972,652,28.6,0.0436),
(34,508,167,0,1.0123,508,26.0,0.132),
(35,650,300,-100,1.0494,687,34.8,0.05),
(36,560,240,0,1.05,580,26.4,0.049),
(37,540,250,0,1.0275,564,24.3,0.057),
(38,830,300,-150,1.0265,865,34.5,0.057),
(39,1000,300,-100,1.03,1100,500.0,0.006)]
branches = [
(1,2,0.0035,0.0411,0.6987,600,1),(1,39,0.001,0.025,0.75,1000,1),(2,3,0.0013,0.0151,0.2572,500,1),
(2,25,0.007,0.0086,0.146,500,1),(2,30,0,0.0181,0,900,1.025),(3,4,0.0013,0.0213,0.2214,500,1),
(3,18,0.0011,0.0133,0.2138,500,1),(4,5,0.0008,0.0128,0.1342,600,1),(4,14,0.0008,0.0129,0.1382,500,1),
(5,6,0.0002,0.0026,0.0434,1200,1),(5,8,0.0008,0.0112,0.1476,900,1),(6,7,0.0006,0.0092,0.113,900,1),
(6,11,0.0007,0.0082,0.1389,480,1),(6,31,0,0.025,0,1800,1.07),(7,8,0.0004,0.0046,0.078,900,1),
(8,9,0.0023,0.0363,0.3804,900,1),(9,39,0.001,0.025,1.2,900,1),(10,11,0.0004,0.0043,0.0729,600,1),
(10,13,0.0004,0.0043,0.0729,600,1),(10,32,0,0.02,0,900,1.07),(12,11,0.0016,0.0435,0,500,1.006),
(12,13,0.0016,0.0435,0,500,1.006),(13,14,0.0009,0.0101,0.1723,600,1),(14,15,0.0018,0.0217,0.366,600,1),
(15,16,0.0009,0.0094,0.171,600,1),(16,17,0.0007,0.0089,0.1342,600,1),(16,19,0.0016,0.0195,0.304,600,1),
(16,21,0.0008,0.0135,0.2548,600,1),(16,24,0.0003,0.0059,0.068,600,1),(17,18,0.0007,0.0082,0.1319,600,1),
(17,27,0.0013,0.0173,0.3216,600,1),(19,20,0.0007,0.0138,0,900,1.06),(19,33,0.0007,0.0142,0,900,1.07),
(20,34,0.0009,0.018,0,900,1.009),(21,22,0.0008,0.014,0.2565,900,1),(22,23,0.0006,0.0096,0.1846,600,1),
(22,35,0,0.0143,0,900,1.025),(23,24,0.0022,0.035,0.361,600,1),(23,36,0.0005,0.0272,0,900,1),
(25,26,0.0032,0.0323,0.531,600,1),(25,37,0.0006,0.0232,0,900,1.025),(26,27,0.0014,0.0147,0.2396,600,1),
(26,28,0.0043,0.0474,0.7802,600,1),(26,29,0.0057,0.0625,1.029,600,1),(28,29,0.0014,0.0151,0.249,600,1),
(29,38,0.0008,0.0156,0,1200,1.025)]
buses=[]
for i in range(1,40):
    t = 'slack' if i==31 else ('pv' if i>=30 else 'pq')
    pd,qd = loads.get(i,(0,0))
    buses.append(dict(id=i,type=t,area='sink' if i in sink else 'source',pd_mw=pd,qd_mvar=qd,v_min=0.94,v_max=1.10))
lines=[]
for f,t,r,x,b,rate,tap in branches:
    rate = max(rate, 900 if max(f,t) < 30 else 1200)
    lines.append(dict(id=f"{f}-{t}",**{"from":f,"to":t},r=r,x=x,b=b,tap=tap,p_min_mw=-rate,p_max_mw=rate))
gl=[]
for bus,pg,qmax,qmin,vg,pmax,h,xd in gens:
    src = bus not in sink
    gl.append(dict(id=f"G{bus}",bus=bus,p_mw=pg,vg=vg,p_min_mw=round(0.1*pmax,1),p_max_mw=pmax,q_min_mvar=-round(0.4*pmax),q_max_mvar=round(0.7*pmax),
      ramp_down_mw_per_h=round(0.3*pmax),ramp_up_mw_per_h=round(0.3*pmax),h_s=h,xd_prime=xd,damping=0.0,
      cost=dict(a=0.01,b=18.0 if src else 25.0,c=100.0)))
case=dict(name="ieee39-wind-ess",base_mva=100,buses=buses,lines=lines,generators=gl,
 wind_farms=[dict(id="W17",bus=17,rated_mw=500,p_mw=0,cut_in_speed=5.2,rated_speed=11.5,cut_out_speed=25,curtail_cost_per_mwh=500)],
 storage=[dict(id="ESS17",bus=17,p_charge_max_mw=100,p_discharge_max_mw=100,e_min_mwh=10,e_max_mwh=100,e0_mwh=50,p_mw=0)],
 tie_lines=[dict(line="1-39",sending_bus=1),dict(line="2-3",sending_bus=2),dict(line="3-18",sending_bus=18),dict(line="15-16",sending_bus=16)],
 contingencies=[dict(id="C1",line="1-39",fault_bus=1,clearing_time_s=0.1,trip=True),
                dict(id="C2",line="2-3",fault_bus=2,clearing_time_s=0.1,trip=True),
                dict(id="C3",line="3-18",fault_bus=18,clearing_time_s=0.1,trip=True),
                dict(id="C4",line="15-16",fault_bus=16,clearing_time_s=0.1,trip=True)])
out = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else pathlib.Path(__file__).resolve().parent.parent / 'data' / 'ieee39_wind_ess.json'
with open(out, 'w') as f:
    json.dump(case, f, indent=1)

