# small equal-length corpus used by the parser tests
@problemName toy
@dimensions 2
@equalLength true
@seriesLength 4
@classLabel true a b c
@data
1.0,2.0,3.0,4.0:0.5,0.5,0.5,0.5:a
2.0,2.5,3.5,4.5:0.1,0.2,0.3,0.4:b
-1.0,-2.0,-3.0,-4.0:1.5,1.25,1.0,0.75:c
4.0,3.0,2.0,1.0:0.0,0.5,1.0,1.5:a
0.5,1.5,2.5,3.5:2.0,1.0,0.0,-1.0:b
1.0,1.0,1.0,1.0:0.25,0.75,1.25,1.75:c
